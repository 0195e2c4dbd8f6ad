#include "docre/model.hpp"

#include "docre/common.hpp"

#include <cmath>

namespace docre {

using ag::Graph;
using ag::Mat;
using ag::Var;

namespace {

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

ToyEncoderConfig encoder_config(const ModelConfig& cfg) {
  ToyEncoderConfig ec;
  ec.hidden_dim = cfg.hidden_dim;
  ec.num_heads = cfg.num_heads;
  ec.num_layers = cfg.num_layers;
  ec.max_positions = cfg.max_positions;
  ec.ffn_mult = cfg.ffn_mult;
  ec.dropout = cfg.dropout;
  return ec;
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return {{"hidden_dim", hidden_dim},
          {"num_heads", num_heads},
          {"num_layers", num_layers},
          {"ffn_mult", ffn_mult},
          {"max_positions", max_positions},
          {"dropout", dropout},
          {"chunk_len", chunk_len},
          {"chunk_stride", chunk_stride},
          {"bilinear_groups", bilinear_groups},
          {"use_axial", use_axial},
          {"stacked_axial", stacked_axial},
          {"mask_axial_diagonal", mask_axial_diagonal},
          {"normalize_context_query", normalize_context_query},
          {"loss_variant", to_string(loss_variant)},
          {"gamma", gamma}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.num_heads = j.value("num_heads", cfg.num_heads);
    cfg.num_layers = j.value("num_layers", cfg.num_layers);
    cfg.ffn_mult = j.value("ffn_mult", cfg.ffn_mult);
    cfg.max_positions = j.value("max_positions", cfg.max_positions);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.chunk_len = j.value("chunk_len", cfg.chunk_len);
    cfg.chunk_stride = j.value("chunk_stride", cfg.chunk_stride);
    cfg.bilinear_groups = j.value("bilinear_groups", cfg.bilinear_groups);
    cfg.use_axial = j.value("use_axial", cfg.use_axial);
    cfg.stacked_axial = j.value("stacked_axial", cfg.stacked_axial);
    cfg.mask_axial_diagonal =
        j.value("mask_axial_diagonal", cfg.mask_axial_diagonal);
    cfg.normalize_context_query =
        j.value("normalize_context_query", cfg.normalize_context_query);
    if (j.contains("loss_variant")) {
      cfg.loss_variant =
          loss_variant_from_string(j.at("loss_variant").get<std::string>());
    }
    cfg.gamma = j.value("gamma", cfg.gamma);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return cfg;
}

Model::Model(Vocab vocab, int num_relations, const ModelConfig& cfg,
             uint64_t seed)
    : cfg_(cfg),
      vocab_(std::move(vocab)),
      num_relations_(num_relations),
      seed_(seed),
      backend_(vocab_.size(), encoder_config(cfg),
               sub_seed(seed, "init.encoder")),
      fuse_ws_("pair.fuse.ws", uniform_init(cfg.hidden_dim, cfg.hidden_dim,
                                            sub_seed(seed, "init.fuse.ws"))),
      fuse_wo_("pair.fuse.wo", uniform_init(cfg.hidden_dim, cfg.hidden_dim,
                                            sub_seed(seed, "init.fuse.wo"))),
      fuse_wc_("pair.fuse.wc", uniform_init(cfg.hidden_dim, cfg.hidden_dim,
                                            sub_seed(seed, "init.fuse.wc"))),
      bilinear_(cfg.hidden_dim, cfg.bilinear_groups,
                sub_seed(seed, "init.bilinear")),
      axial_(cfg.hidden_dim, sub_seed(seed, "init.axial")),
      cls_(cfg.hidden_dim, num_relations + 1, sub_seed(seed, "init.cls")) {
  if (num_relations < 1) {
    throw ConfigError("model needs at least one relation");
  }
}

DocScores Model::score(Graph& g, const Document& doc, bool train,
                       std::mt19937_64& dropout_rng) {
  int n = doc.n_entities();
  if (n < 2) {
    throw TrainingError("document '" + doc.doc_id +
                        "' has fewer than two entities, nothing to score");
  }

  MarkedSequence seq = insert_markers(doc, vocab_);
  EncodeOut enc = encode_chunked(g, seq.token_ids, backend_, cfg_.chunk_len,
                                 cfg_.chunk_stride, train, dropout_rng);
  EntityFeatures ef = compute_entity_features(g, seq, enc);

  // batched localized context: per head stack entity attention rows, gather
  // the pair endpoints and multiply elementwise, matching context_vector
  auto pairs = candidate_pairs(n);
  std::vector<int> s_idx, o_idx;
  s_idx.reserve(pairs.size());
  o_idx.reserve(pairs.size());
  for (auto [s, o] : pairs) {
    s_idx.push_back(s);
    o_idx.push_back(o);
  }

  int heads = backend_.num_heads();
  Var q{};
  for (int h = 0; h < heads; h++) {
    std::vector<Var> rows;
    rows.reserve(n);
    for (int e = 0; e < n; e++) rows.push_back(ef.a_e[e][h]);
    Var a_h = g.concat_rows(rows);  // n x l
    Var term = g.cmul(g.gather_rows(a_h, s_idx), g.gather_rows(a_h, o_idx));
    q = h == 0 ? term : g.add(q, term);
  }
  if (cfg_.normalize_context_query) q = g.normalize_rows_sum1(q);
  Var ctx = g.matmul(q, enc.hidden);  // P x d

  Var h_s = g.gather_rows(ef.h_e, s_idx);
  Var h_o = g.gather_rows(ef.h_e, o_idx);
  Var wc = g.param(fuse_wc_);
  Var z_s = fuse_context(g, h_s, ctx, g.param(fuse_ws_), wc);
  Var z_o = fuse_context(g, h_o, ctx, g.param(fuse_wo_), wc);

  PairMatrix pm = build_pair_matrix(g, z_s, z_o, n, bilinear_);
  Var rep = pm.G;
  if (cfg_.use_axial) {
    AxialOptions opts;
    opts.mask_diagonal = cfg_.mask_axial_diagonal;
    opts.stacked = cfg_.stacked_axial;
    rep = axial_attention(g, pm, axial_, opts);
  }
  return {n, classify(g, rep, cls_)};
}

Var Model::loss(Graph& g, const DocScores& scores, const LabelTensor& labels) {
  LossConfig lc;
  lc.variant = cfg_.loss_variant;
  lc.gamma = cfg_.gamma;
  return batch_loss(g, scores.logits, labels, lc);
}

Eigen::MatrixXd Model::infer_logits(const Document& doc) {
  Graph g;
  std::mt19937_64 rng(0);  // unused, dropout disabled in eval mode
  DocScores s = score(g, doc, false, rng);
  return s.logits.value();
}

std::vector<ag::Tensor*> Model::parameters() {
  std::vector<ag::Tensor*> out = backend_.parameters();
  out.push_back(&fuse_ws_);
  out.push_back(&fuse_wo_);
  out.push_back(&fuse_wc_);
  out.push_back(&bilinear_.w);
  out.push_back(&bilinear_.b);
  out.push_back(&axial_.wq);
  out.push_back(&axial_.wk);
  out.push_back(&axial_.wv);
  out.push_back(&cls_.w);
  out.push_back(&cls_.b);
  return out;
}

PredictionSet model_predictions(Model& model,
                                const std::vector<Document>& docs) {
  std::vector<Triple> out;
  for (const Document& doc : docs) {
    int n = doc.n_entities();
    if (n < 2) continue;
    Eigen::MatrixXd logits = model.infer_logits(doc);
    for (auto [s, o] : candidate_pairs(n)) {
      Eigen::RowVectorXd row = logits.row(PairMatrix::row(s, o, n));
      for (int r : decide(row)) out.push_back({doc.doc_id, s, o, r});
    }
  }
  return PredictionSet::of(std::move(out));
}

Vocab vocab_from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const std::string& tok : tokens) v.add(tok);
  auto it = v.ids.find("[UNK]");
  if (it == v.ids.end()) {
    throw SchemaError("vocabulary is missing the [UNK] token");
  }
  v.unk_id = it->second;
  return v;
}

}  // namespace docre
