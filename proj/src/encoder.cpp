#include "docre/encoder.hpp"

#include "docre/common.hpp"

#include <algorithm>
#include <cmath>

namespace docre {

using ag::Graph;
using ag::Mat;
using ag::Var;

Vocab Vocab::build(const std::vector<Document>& docs, bool include_marker) {
  Vocab v;
  v.unk_id = v.add("[UNK]");
  if (include_marker) v.marker_id = v.add("*");
  for (const Document& d : docs) {
    for (const auto& sent : d.sentences) {
      for (const std::string& tok : sent) {
        if (v.ids.find(tok) == v.ids.end()) v.add(tok);
      }
    }
  }
  return v;
}

int Vocab::add(const std::string& tok) {
  auto it = ids.find(tok);
  if (it != ids.end()) return it->second;
  int id = static_cast<int>(tokens.size());
  tokens.push_back(tok);
  ids.emplace(tok, id);
  if (tok == "*") marker_id = id;
  return id;
}

int Vocab::id_of(const std::string& tok) const {
  auto it = ids.find(tok);
  return it == ids.end() ? unk_id : it->second;
}

MarkedSequence insert_markers(const Document& doc, const Vocab& vocab) {
  if (!vocab.has_marker()) {
    throw ConfigError("vocabulary has no '*' marker token");
  }
  int total = doc.total_tokens();

  struct Bound {
    int entity;
    int mention;
    int start;
    int end;
  };
  std::vector<std::vector<Bound>> opens(static_cast<size_t>(total) + 1);
  std::vector<std::vector<Bound>> closes(static_cast<size_t>(total) + 1);
  for (int e = 0; e < doc.n_entities(); ++e) {
    const auto& mentions = doc.entities[static_cast<size_t>(e)];
    for (int m = 0; m < static_cast<int>(mentions.size()); ++m) {
      const Mention& men = mentions[static_cast<size_t>(m)];
      opens[static_cast<size_t>(men.start)].push_back(
          {e, m, men.start, men.end});
      closes[static_cast<size_t>(men.end)].push_back(
          {e, m, men.start, men.end});
    }
  }
  // at a shared boundary the wider span opens first and closes last
  for (auto& v : opens) {
    std::stable_sort(v.begin(), v.end(),
                     [](const Bound& a, const Bound& b) { return a.end > b.end; });
  }
  for (auto& v : closes) {
    std::stable_sort(v.begin(), v.end(), [](const Bound& a, const Bound& b) {
      return a.start > b.start;
    });
  }

  std::vector<int> flat;
  flat.reserve(static_cast<size_t>(total));
  for (const auto& sent : doc.sentences) {
    for (const std::string& tok : sent) flat.push_back(vocab.id_of(tok));
  }

  MarkedSequence out;
  out.token_ids.reserve(static_cast<size_t>(total) + 1);
  out.mention_marker_index.resize(static_cast<size_t>(doc.n_entities()));
  for (int e = 0; e < doc.n_entities(); ++e) {
    out.mention_marker_index[static_cast<size_t>(e)].resize(
        doc.entities[static_cast<size_t>(e)].size(), -1);
  }
  for (int i = 0; i <= total; ++i) {
    for (const Bound& b : closes[static_cast<size_t>(i)]) {
      (void)b;
      out.token_ids.push_back(vocab.marker_id);
      out.is_marker.push_back(true);
    }
    for (const Bound& b : opens[static_cast<size_t>(i)]) {
      out.mention_marker_index[static_cast<size_t>(b.entity)]
                              [static_cast<size_t>(b.mention)] =
          static_cast<int>(out.token_ids.size());
      out.token_ids.push_back(vocab.marker_id);
      out.is_marker.push_back(true);
    }
    if (i < total) {
      out.token_ids.push_back(flat[static_cast<size_t>(i)]);
      out.is_marker.push_back(false);
    }
  }
  return out;
}

namespace {

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound,
                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

}  // namespace

ToyTransformerBackend::ToyTransformerBackend(int vocab_size,
                                             const ToyEncoderConfig& cfg,
                                             uint64_t seed)
    : cfg_(cfg), vocab_size_(vocab_size) {
  if (cfg.hidden_dim % cfg.num_heads != 0) {
    throw ConfigError("hidden_dim must be divisible by num_heads");
  }
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  std::mt19937_64 rng(seed);
  int d = cfg.hidden_dim;
  int hd = d / cfg.num_heads;
  int f = d * cfg.ffn_mult;
  double bd = 1.0 / std::sqrt(static_cast<double>(d));
  double bf = 1.0 / std::sqrt(static_cast<double>(f));

  emb_ = ag::Tensor("enc.emb", uniform_init(vocab_size, d, bd, rng));
  pos_ = ag::Tensor("enc.pos", uniform_init(cfg.max_positions, d, bd, rng));
  layers_.resize(static_cast<size_t>(cfg.num_layers));
  for (int li = 0; li < cfg.num_layers; ++li) {
    Layer& L = layers_[static_cast<size_t>(li)];
    std::string p = "enc.L" + std::to_string(li) + ".";
    L.ln1_g = ag::Tensor(p + "ln1.g", Mat::Ones(1, d));
    L.ln1_b = ag::Tensor(p + "ln1.b", Mat::Zero(1, d));
    for (int h = 0; h < cfg.num_heads; ++h) {
      std::string hp = p + "h" + std::to_string(h) + ".";
      L.wq.emplace_back(hp + "wq", uniform_init(d, hd, bd, rng));
      L.wk.emplace_back(hp + "wk", uniform_init(d, hd, bd, rng));
      L.wv.emplace_back(hp + "wv", uniform_init(d, hd, bd, rng));
    }
    L.wo = ag::Tensor(p + "wo", uniform_init(d, d, bd, rng));
    L.bo = ag::Tensor(p + "bo", Mat::Zero(1, d));
    L.ln2_g = ag::Tensor(p + "ln2.g", Mat::Ones(1, d));
    L.ln2_b = ag::Tensor(p + "ln2.b", Mat::Zero(1, d));
    L.w1 = ag::Tensor(p + "ffn.w1", uniform_init(d, f, bd, rng));
    L.b1 = ag::Tensor(p + "ffn.b1", Mat::Zero(1, f));
    L.w2 = ag::Tensor(p + "ffn.w2", uniform_init(f, d, bf, rng));
    L.b2 = ag::Tensor(p + "ffn.b2", Mat::Zero(1, d));
  }
  lnf_g_ = ag::Tensor("enc.lnf.g", Mat::Ones(1, d));
  lnf_b_ = ag::Tensor("enc.lnf.b", Mat::Zero(1, d));
}

EncodeOut ToyTransformerBackend::encode(Graph& g,
                                        const std::vector<int>& token_ids,
                                        bool train, std::mt19937_64& rng) {
  int l = static_cast<int>(token_ids.size());
  if (l == 0) throw Error("encode: empty sequence");
  if (l > cfg_.max_positions) {
    throw ConfigError("encode: sequence length " + std::to_string(l) +
                      " exceeds max_positions " +
                      std::to_string(cfg_.max_positions));
  }
  for (int id : token_ids) {
    if (id < 0 || id >= vocab_size_) {
      throw Error("encode: token id " + std::to_string(id) +
                  " outside vocabulary");
    }
  }
  double p = cfg_.dropout;
  int hd = cfg_.hidden_dim / cfg_.num_heads;
  double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Var x = g.add(g.gather_rows(g.param(emb_), token_ids),
                g.slice_rows(g.param(pos_), 0, l));
  x = g.dropout(x, p, rng, train);

  std::vector<Var> last_attn;
  for (size_t li = 0; li < layers_.size(); ++li) {
    Layer& L = layers_[li];
    Var xn = g.layer_norm_rows(x, g.param(L.ln1_g), g.param(L.ln1_b));
    std::vector<Var> heads;
    std::vector<Var> attns;
    for (int h = 0; h < cfg_.num_heads; ++h) {
      Var q = g.matmul(xn, g.param(L.wq[static_cast<size_t>(h)]));
      Var k = g.matmul(xn, g.param(L.wk[static_cast<size_t>(h)]));
      Var v = g.matmul(xn, g.param(L.wv[static_cast<size_t>(h)]));
      Var scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_hd);
      Var attn = g.softmax_rows(scores);
      attns.push_back(attn);
      heads.push_back(g.matmul(attn, v));
    }
    Var proj = g.add_rowvec(g.matmul(g.concat_cols(heads), g.param(L.wo)),
                            g.param(L.bo));
    x = g.add(x, g.dropout(proj, p, rng, train));
    Var xn2 = g.layer_norm_rows(x, g.param(L.ln2_g), g.param(L.ln2_b));
    Var ffn = g.add_rowvec(
        g.matmul(g.relu(g.add_rowvec(g.matmul(xn2, g.param(L.w1)),
                                     g.param(L.b1))),
                 g.param(L.w2)),
        g.param(L.b2));
    x = g.add(x, g.dropout(ffn, p, rng, train));
    if (li + 1 == layers_.size()) last_attn = std::move(attns);
  }
  Var hidden = g.layer_norm_rows(x, g.param(lnf_g_), g.param(lnf_b_));
  return EncodeOut{hidden, std::move(last_attn)};
}

std::vector<ag::Tensor*> ToyTransformerBackend::parameters() {
  std::vector<ag::Tensor*> out = {&emb_, &pos_};
  for (Layer& L : layers_) {
    out.push_back(&L.ln1_g);
    out.push_back(&L.ln1_b);
    for (auto& t : L.wq) out.push_back(&t);
    for (auto& t : L.wk) out.push_back(&t);
    for (auto& t : L.wv) out.push_back(&t);
    out.push_back(&L.wo);
    out.push_back(&L.bo);
    out.push_back(&L.ln2_g);
    out.push_back(&L.ln2_b);
    out.push_back(&L.w1);
    out.push_back(&L.b1);
    out.push_back(&L.w2);
    out.push_back(&L.b2);
  }
  out.push_back(&lnf_g_);
  out.push_back(&lnf_b_);
  return out;
}

EncodeOut encode_chunked(Graph& g, const std::vector<int>& token_ids,
                         EncoderBackend& backend, int max_len, int stride,
                         bool train, std::mt19937_64& rng) {
  int l = static_cast<int>(token_ids.size());
  if (l == 0) throw Error("encode_chunked: empty sequence");
  if (max_len <= 0) max_len = backend.max_positions();
  if (max_len > backend.max_positions()) {
    throw ConfigError("encode_chunked: max_len " + std::to_string(max_len) +
                      " exceeds backend max_positions " +
                      std::to_string(backend.max_positions()));
  }
  if (l <= max_len) {
    return backend.encode(g, token_ids, train, rng);
  }
  if (stride <= 0) {
    throw ConfigError("encode_chunked: sequence of length " +
                      std::to_string(l) + " exceeds max_len " +
                      std::to_string(max_len) + " and stride is not positive");
  }
  if (stride >= max_len) {
    throw ConfigError("encode_chunked: stride must be smaller than max_len");
  }

  std::vector<int> starts = {0};
  while (starts.back() + max_len < l) {
    starts.push_back(std::min(starts.back() + stride, l - max_len));
  }

  int heads = backend.num_heads();
  int d = backend.hidden_dim();

  std::vector<int> coverage(static_cast<size_t>(l), 0);
  for (int s : starts) {
    for (int p = s; p < s + max_len; ++p) ++coverage[static_cast<size_t>(p)];
  }

  Var hidden_sum;
  std::vector<Var> attn_sum(static_cast<size_t>(heads));
  for (size_t ci = 0; ci < starts.size(); ++ci) {
    int s = starts[ci];
    std::vector<int> chunk(token_ids.begin() + s,
                           token_ids.begin() + s + max_len);
    EncodeOut enc = backend.encode(g, chunk, train, rng);
    Var hp = g.pad(enc.hidden, l, d, s, 0);
    hidden_sum = (ci == 0) ? hp : g.add(hidden_sum, hp);
    for (int h = 0; h < heads; ++h) {
      Var ap = g.pad(enc.attention[static_cast<size_t>(h)], l, l, s, s);
      attn_sum[static_cast<size_t>(h)] =
          (ci == 0) ? ap : g.add(attn_sum[static_cast<size_t>(h)], ap);
    }
  }

  Mat hidden_recip(l, d);
  for (int p = 0; p < l; ++p) {
    hidden_recip.row(p).setConstant(1.0 / coverage[static_cast<size_t>(p)]);
  }
  EncodeOut out;
  out.hidden = g.cmul_const(hidden_sum, std::move(hidden_recip));

  // entries average over chunks covering both endpoints; rows renormalize
  Mat pair_recip = Mat::Zero(l, l);
  for (int p = 0; p < l; ++p) {
    for (int q = 0; q < l; ++q) {
      int both = 0;
      for (int s : starts) {
        if (p >= s && p < s + max_len && q >= s && q < s + max_len) ++both;
      }
      if (both > 0) pair_recip(p, q) = 1.0 / both;
    }
  }
  out.attention.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var avg = g.cmul_const(attn_sum[static_cast<size_t>(h)], pair_recip);
    out.attention.push_back(g.normalize_rows_sum1(avg));
  }
  return out;
}

Var pool_entity(Graph& g, Var hidden, const std::vector<int>& mention_rows) {
  if (mention_rows.empty()) {
    throw Error("pool_entity: entity has no mentions");
  }
  return g.logsumexp_cols(g.gather_rows(hidden, mention_rows));
}

Var pool_entity_attention(Graph& g, Var head_attention,
                          const std::vector<int>& mention_rows) {
  if (mention_rows.empty()) {
    throw Error("pool_entity_attention: entity has no mentions");
  }
  Var rows = g.gather_rows(head_attention, mention_rows);
  return g.scale(g.col_sums(rows),
                 1.0 / static_cast<double>(mention_rows.size()));
}

EntityFeatures compute_entity_features(Graph& g, const MarkedSequence& seq,
                                       const EncodeOut& enc) {
  int n = static_cast<int>(seq.mention_marker_index.size());
  if (n == 0) throw Error("compute_entity_features: no entities");
  int heads = static_cast<int>(enc.attention.size());
  EntityFeatures out;
  out.a_e.resize(static_cast<size_t>(n));
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int e = 0; e < n; ++e) {
    const std::vector<int>& markers =
        seq.mention_marker_index[static_cast<size_t>(e)];
    rows.push_back(pool_entity(g, enc.hidden, markers));
    for (int h = 0; h < heads; ++h) {
      out.a_e[static_cast<size_t>(e)].push_back(pool_entity_attention(
          g, enc.attention[static_cast<size_t>(h)], markers));
    }
  }
  out.h_e = g.concat_rows(rows);
  return out;
}

Var context_vector(Graph& g, const std::vector<ag::Var>& a_s,
                   const std::vector<ag::Var>& a_o, Var hidden,
                   bool normalize_query) {
  if (a_s.empty() || a_s.size() != a_o.size()) {
    throw Error("context_vector: head count mismatch");
  }
  Var q = g.cmul(a_s[0], a_o[0]);
  for (size_t h = 1; h < a_s.size(); ++h) {
    q = g.add(q, g.cmul(a_s[h], a_o[h]));
  }
  if (normalize_query) q = g.normalize_rows_sum1(q);
  return g.matmul(q, hidden);
}

Var fuse_context(Graph& g, Var h_e, Var c, Var w_h, Var w_c) {
  return g.tanh(g.add(g.matmul(h_e, w_h), g.matmul(c, w_c)));
}

}  // namespace docre
