#include "docre/model.hpp"
#include "docre/synth.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <random>

using namespace docre;
using ag::Graph;
using ag::Mat;
using ag::Var;

namespace {

std::vector<Document> tiny_corpus(uint64_t seed = 7) {
  SynthSpec spec;
  spec.docs = 3;
  spec.relations = 3;
  spec.entities_min = 3;
  spec.entities_max = 4;
  spec.pair_fact_rate = 0.4;
  spec.seed = seed;
  return make_verb_corpus(spec);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.0;
  cfg.bilinear_groups = 2;
  return cfg;
}

ag::Tensor* tensor_by_name(Model& m, const std::string& name) {
  for (ag::Tensor* t : m.parameters()) {
    if (t->name == name) return t;
  }
  REQUIRE_MESSAGE(false, "no tensor named " << name);
  return nullptr;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config json round-trip") {
  ModelConfig cfg = tiny_config();
  cfg.use_axial = false;
  cfg.stacked_axial = true;
  cfg.normalize_context_query = false;
  cfg.loss_variant = LossVariant::ATL;
  cfg.gamma = 0.25;
  cfg.chunk_len = 16;
  cfg.chunk_stride = 8;

  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.hidden_dim == 8);
  CHECK(back.loss_variant == LossVariant::ATL);
  CHECK(!back.use_axial);

  CHECK_THROWS_AS(
      ModelConfig::from_json(nlohmann::json{{"loss_variant", "nope"}}),
      ConfigError);
  CHECK_THROWS_AS(
      ModelConfig::from_json(nlohmann::json{{"hidden_dim", "eight"}}),
      ConfigError);
}

TEST_CASE("construction is deterministic in the seed") {
  auto docs = tiny_corpus();
  Vocab vocab = Vocab::build(docs);
  Model a(vocab, 3, tiny_config(), 42);
  Model b(vocab, 3, tiny_config(), 42);
  Model c(vocab, 3, tiny_config(), 43);

  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < pa.size(); i++) {
    CHECK(pa[i]->name == pb[i]->name);
    if (pa[i]->value != pb[i]->value) all_equal = false;
    if (pa[i]->value != pc[i]->value) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("score shapes and eval-mode determinism") {
  auto docs = tiny_corpus();
  Vocab vocab = Vocab::build(docs);
  Model model(vocab, 3, tiny_config(), 5);

  int n = docs[0].n_entities();
  Mat l1 = model.infer_logits(docs[0]);
  Mat l2 = model.infer_logits(docs[0]);
  CHECK(l1.rows() == n * n);
  CHECK(l1.cols() == 4);
  CHECK(l1 == l2);  // no dropout in eval mode, bitwise stable

  Document lonely;
  lonely.doc_id = "lonely";
  lonely.sentences = {{"just", "one"}};
  lonely.entities = {{Mention{0, 0, 0, 1, "just", "T"}}};
  Graph g;
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(model.score(g, lonely, false, rng), TrainingError);
}

TEST_CASE("assembled forward matches the per-pair pipeline") {
  auto docs = tiny_corpus(11);
  Vocab vocab = Vocab::build(docs);
  ModelConfig cfg = tiny_config();
  cfg.use_axial = false;  // keeps the oracle a straight per-pair pipeline
  Model model(vocab, 3, cfg, 99);
  const Document& doc = docs[0];
  int n = doc.n_entities();

  Mat got = model.infer_logits(doc);

  // replay the pipeline pair by pair through the public building blocks
  Graph g;
  std::mt19937_64 rng(0);
  MarkedSequence seq = insert_markers(doc, vocab);
  EncodeOut enc = encode_chunked(g, seq.token_ids, model.backend(), 0, 0,
                                 false, rng);
  EntityFeatures ef = compute_entity_features(g, seq, enc);

  BilinearParams bl(cfg.hidden_dim, cfg.bilinear_groups, 0);
  bl.w.value = tensor_by_name(model, "pair.bilinear.w")->value;
  bl.b.value = tensor_by_name(model, "pair.bilinear.b")->value;
  ClassifierHead head(cfg.hidden_dim, 4, 0);
  head.w.value = tensor_by_name(model, "pair.cls.w")->value;
  head.b.value = tensor_by_name(model, "pair.cls.b")->value;
  Var ws = g.param(*tensor_by_name(model, "pair.fuse.ws"));
  Var wo = g.param(*tensor_by_name(model, "pair.fuse.wo"));
  Var wc = g.param(*tensor_by_name(model, "pair.fuse.wc"));

  for (auto [s, o] : candidate_pairs(n)) {
    Var c = context_vector(g, ef.a_e[s], ef.a_e[o], enc.hidden, true);
    Var h_s = g.gather_rows(ef.h_e, {s});
    Var h_o = g.gather_rows(ef.h_e, {o});
    Var cell = grouped_bilinear(g, fuse_context(g, h_s, c, ws, wc),
                                fuse_context(g, h_o, c, wo, wc), bl);
    Var logit = classify(g, cell, head);
    Eigen::RowVectorXd want = logit.value().row(0);
    Eigen::RowVectorXd have = got.row(PairMatrix::row(s, o, n));
    CHECK((want - have).cwiseAbs().maxCoeff() < 1e-10);
  }

  // diagonal rows carry only the classifier bias over a zero representation
  for (int e = 0; e < n; e++) {
    Eigen::RowVectorXd diag = got.row(PairMatrix::row(e, e, n));
    CHECK((diag - head.b.value.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("architecture toggles change the scores") {
  auto docs = tiny_corpus();
  Vocab vocab = Vocab::build(docs);
  ModelConfig base = tiny_config();

  Model with_axial(vocab, 3, base, 5);
  Mat l_axial = with_axial.infer_logits(docs[0]);

  ModelConfig no_ax = base;
  no_ax.use_axial = false;
  Model without(vocab, 3, no_ax, 5);
  Mat l_plain = without.infer_logits(docs[0]);
  CHECK(l_axial != l_plain);

  ModelConfig stacked = base;
  stacked.stacked_axial = true;
  Model st(vocab, 3, stacked, 5);
  CHECK(st.infer_logits(docs[0]) != l_axial);

  ModelConfig unnorm = base;
  unnorm.normalize_context_query = false;
  Model un(vocab, 3, unnorm, 5);
  CHECK(un.infer_logits(docs[0]) != l_axial);
}

TEST_CASE("full-stack gradients agree with finite differences") {
  auto docs = tiny_corpus(23);
  Vocab vocab = Vocab::build(docs);
  ModelConfig cfg = tiny_config();
  RelationSchema schema = make_schema(3);
  Model model(vocab, 3, cfg, 31);
  const Document& doc = docs[0];
  LabelTensor labels = build_label_tensor(doc, schema);

  auto build = [&](Graph& g) -> Var {
    std::mt19937_64 rng(0);
    DocScores scores = model.score(g, doc, false, rng);
    return model.loss(g, scores, labels);
  };
  std::vector<ag::Tensor*> probe = {
      tensor_by_name(model, "pair.fuse.wc"),
      tensor_by_name(model, "pair.cls.w"),
      tensor_by_name(model, "pair.axial.wq"),
      tensor_by_name(model, "enc.L0.h0.wq"),
  };
  CHECK(testutil::fd_max_err_params(build, probe, 1e-5) < 1e-4);
}

TEST_CASE("predictions are well-formed and skip tiny documents") {
  auto docs = tiny_corpus();
  Document lonely;
  lonely.doc_id = "lonely";
  lonely.sentences = {{"one"}};
  lonely.entities = {{Mention{0, 0, 0, 1, "one", "T"}}};
  docs.push_back(lonely);

  Vocab vocab = Vocab::build(docs);
  Model model(vocab, 3, tiny_config(), 5);
  PredictionSet pred = model_predictions(model, docs);
  for (const Triple& t : pred.triples) {
    CHECK(t.s != t.o);
    CHECK(t.relation >= 0);
    CHECK(t.relation < 3);
    CHECK(t.doc_id != "lonely");
  }
}

TEST_CASE("vocab rebuilds from its token list") {
  auto docs = tiny_corpus();
  Vocab vocab = Vocab::build(docs);
  Vocab back = vocab_from_tokens(vocab.tokens);
  CHECK(back.tokens == vocab.tokens);
  CHECK(back.unk_id == vocab.unk_id);
  CHECK(back.marker_id == vocab.marker_id);
  CHECK(back.id_of("never-seen-token") == back.unk_id);

  CHECK_THROWS_AS(vocab_from_tokens({"a", "b"}), SchemaError);
}

TEST_SUITE_END();
