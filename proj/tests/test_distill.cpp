#include "docre/distill.hpp"

#include "docre/io.hpp"
#include "docre/loss.hpp"
#include "docre/synth.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace docre;
using ag::Graph;
using ag::Mat;
using ag::Var;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("distill_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

struct Setup {
  std::vector<Document> docs;
  RelationSchema schema;
  Vocab vocab;
  ModelConfig cfg;
};

Setup tiny_setup(uint64_t seed = 7, int docs = 5) {
  Setup s;
  SynthSpec spec;
  spec.docs = docs;
  spec.relations = 3;
  spec.entities_min = 3;
  spec.entities_max = 3;
  spec.pair_fact_rate = 0.4;
  spec.seed = seed;
  s.docs = make_verb_corpus(spec);
  s.schema = make_schema(3);
  s.vocab = Vocab::build(s.docs);
  s.cfg.hidden_dim = 8;
  s.cfg.num_heads = 2;
  s.cfg.num_layers = 1;
  s.cfg.ffn_mult = 2;
  s.cfg.dropout = 0.0;
  s.cfg.bilinear_groups = 2;
  return s;
}

std::vector<Mat> snapshot(Model& m) {
  std::vector<Mat> out;
  for (ag::Tensor* t : m.parameters()) out.push_back(t->value);
  return out;
}

// plain-double reference for row-wise KL(softmax(t) || softmax(s))
double kl_reference(const Mat& teacher, const Mat& student) {
  double total = 0.0;
  for (int r = 0; r < teacher.rows(); r++) {
    Eigen::RowVectorXd p =
        (teacher.row(r).array() - teacher.row(r).maxCoeff()).exp();
    p /= p.sum();
    Eigen::RowVectorXd q =
        (student.row(r).array() - student.row(r).maxCoeff()).exp();
    q /= q.sum();
    for (int c = 0; c < p.size(); c++) {
      if (p(c) > 0) total += p(c) * (std::log(p(c)) - std::log(q(c)));
    }
  }
  return total / teacher.rows();
}

}  // namespace

TEST_SUITE_BEGIN("distill");

TEST_CASE("strategy names round-trip") {
  for (AdaptStrategy s :
       {AdaptStrategy::NA, AdaptStrategy::KD_MSE, AdaptStrategy::KD_KL}) {
    CHECK(adapt_strategy_from_string(adapt_strategy_to_string(s)) == s);
  }
  CHECK_THROWS_AS(adapt_strategy_from_string("banana"), ConfigError);
}

TEST_CASE("mse distillation loss has the right values and gradients") {
  Graph g;
  Mat t(2, 2);
  t << 0.0, 2.0, 1.0, 0.0;

  SUBCASE("identical inputs give zero") {
    Var s = g.input(t);
    CHECK(kd_mse_loss(g, s, t).value()(0, 0) == doctest::Approx(0.0));
  }
  SUBCASE("worked example") {
    // teacher (0, 2) vs student (1, 0): squared gaps 1 and 4, mean 2.5
    Graph g2;
    Mat teach(1, 2), stud(1, 2);
    teach << 0.0, 2.0;
    stud << 1.0, 0.0;
    CHECK(kd_mse_loss(g2, g2.input(stud), teach).value()(0, 0) ==
          doctest::Approx(2.5));
  }
  SUBCASE("uniform offset") {
    // every entry off by one, so the mean of squared gaps is one
    Var s = g.input((t.array() + 1.0).matrix());
    CHECK(kd_mse_loss(g, s, t).value()(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("shape mismatch throws") {
    Var s = g.input(Mat::Zero(3, 2));
    CHECK_THROWS_AS(kd_mse_loss(g, s, t), TrainingError);
  }
  SUBCASE("finite differences") {
    std::mt19937_64 rng(5);
    Mat teacher = testutil::rand_mat(4, 5, rng);
    Mat student0 = testutil::rand_mat(4, 5, rng);
    auto build = [&](Graph& gg, std::vector<Var>& leaves) {
      return kd_mse_loss(gg, leaves[0], teacher);
    };
    CHECK(testutil::fd_max_err(build, {student0}) < 1e-6);
  }
}

TEST_CASE("kl distillation loss matches a direct computation") {
  std::mt19937_64 rng(11);

  SUBCASE("identical logits give zero") {
    Graph g;
    Mat t = testutil::rand_mat(3, 4, rng);
    CHECK(kd_kl_loss(g, g.input(t), t).value()(0, 0) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("random pairs agree with the reference and stay nonnegative") {
    for (int trial = 0; trial < 50; trial++) {
      Graph g;
      Mat t = testutil::rand_mat(3, 4, rng, -4, 4);
      Mat s = testutil::rand_mat(3, 4, rng, -4, 4);
      double got = kd_kl_loss(g, g.input(s), t).value()(0, 0);
      CHECK(got == doctest::Approx(kl_reference(t, s)).epsilon(1e-8));
      CHECK(got >= -1e-12);
    }
  }
  SUBCASE("sharp teacher vs flat student") {
    Graph g;
    Mat t(1, 3), s(1, 3);
    t << 10.0, 0.0, 0.0;
    s << 0.0, 0.0, 0.0;
    double got = kd_kl_loss(g, g.input(s), t).value()(0, 0);
    CHECK(got == doctest::Approx(kl_reference(t, s)).epsilon(1e-10));
    CHECK(got > 0.9);  // roughly log 3 for a near-one-hot teacher
  }
  SUBCASE("shape mismatch throws") {
    Graph g;
    CHECK_THROWS_AS(kd_kl_loss(g, g.input(Mat::Zero(2, 3)), Mat::Zero(2, 4)),
                    TrainingError);
  }
  SUBCASE("finite differences") {
    Mat teacher = testutil::rand_mat(3, 4, rng, -2, 2);
    Mat student0 = testutil::rand_mat(3, 4, rng, -2, 2);
    auto build = [&](Graph& gg, std::vector<Var>& leaves) {
      return kd_kl_loss(gg, leaves[0], teacher);
    };
    CHECK(testutil::fd_max_err(build, {student0}) < 1e-6);
  }
}

TEST_CASE("soft label store covers every pair and round-trips") {
  Setup s = tiny_setup();
  Model teacher(s.vocab, 3, s.cfg, 77);

  SoftLabelStore store = generate_soft_labels(teacher, s.docs);
  size_t expect = 0;
  for (const Document& d : s.docs) expect += d.n_pairs();
  CHECK(store.size() == expect);
  CHECK(store.class_count == 4);
  CHECK(store.fingerprint == teacher_fingerprint(teacher));

  const Document& d0 = s.docs[0];
  const Eigen::RowVectorXd* row = store.find(d0.doc_id, 0, 1);
  REQUIRE(row != nullptr);
  Mat logits = teacher.infer_logits(d0);
  CHECK(*row == logits.row(PairMatrix::row(0, 1, d0.n_entities())));
  CHECK(store.find(d0.doc_id, 0, 0) == nullptr);
  CHECK(store.find("no-such-doc", 0, 1) == nullptr);

  TempDir tmp;
  save_soft_labels(tmp.file("s.bin"), store);
  SoftLabelStore back = load_soft_labels(tmp.file("s.bin"));
  CHECK(back.class_count == store.class_count);
  CHECK(back.fingerprint == store.fingerprint);
  REQUIRE(back.size() == store.size());
  for (const auto& [doc, pairs] : store.records) {
    for (const auto& [pr, vec] : pairs) {
      const Eigen::RowVectorXd* got = back.find(doc, pr.first, pr.second);
      REQUIRE(got != nullptr);
      CHECK(*got == vec);  // bitwise
    }
  }

  // second save of the reloaded store is byte-identical
  save_soft_labels(tmp.file("s2.bin"), back);
  CHECK(read_file_string(tmp.file("s.bin")) ==
        read_file_string(tmp.file("s2.bin")));

  std::string blob = read_file_string(tmp.file("s.bin"));
  write_file_atomic(tmp.file("cut.bin"), blob.substr(0, blob.size() / 2));
  CHECK_THROWS_AS(load_soft_labels(tmp.file("cut.bin")), IoError);
  std::string bad = blob;
  bad[0] = 'X';
  write_file_atomic(tmp.file("bad.bin"), bad);
  CHECK_THROWS_AS(load_soft_labels(tmp.file("bad.bin")), IoError);
}

TEST_CASE("store compatibility checks fail loudly") {
  Setup s = tiny_setup();
  Model teacher(s.vocab, 3, s.cfg, 77);
  SoftLabelStore store = generate_soft_labels(teacher, s.docs);

  CHECK_NOTHROW(require_compatible(store, 4, store.fingerprint));
  CHECK_NOTHROW(require_compatible(store, 4, 0));  // 0 skips the hash check
  CHECK_THROWS_AS(require_compatible(store, 5, store.fingerprint),
                  ConfigError);
  CHECK_THROWS_AS(require_compatible(store, 4, store.fingerprint + 1),
                  ConfigError);

  // the fingerprint reacts to the init seed
  Model other(s.vocab, 3, s.cfg, 78);
  CHECK(teacher_fingerprint(other) != store.fingerprint);
}

TEST_CASE("naive adaptation equals distillation with zero weight") {
  Setup s = tiny_setup();
  auto distant = corrupt_distant(s.docs, 3, 0.3, 0.05, 9);

  Model teacher(s.vocab, 3, s.cfg, 50);
  SoftLabelStore store = generate_soft_labels(teacher, distant);

  auto run = [&](AdaptStrategy strat, double weight) {
    Model student(s.vocab, 3, s.cfg, 60);
    AdaptationPlan plan;
    plan.strategy = strat;
    plan.kd_weight = weight;
    plan.pretrain = {2e-3, 2, 2, 0.06};
    TrainLog log = pretrain_student(student, distant, s.schema,
                                    strat == AdaptStrategy::NA ? nullptr
                                                               : &store,
                                    plan, OptimConfig{}, 3);
    return std::make_pair(snapshot(student), log);
  };

  auto [p_na, log_na] = run(AdaptStrategy::NA, 1.0);
  auto [p_kd0, log_kd0] = run(AdaptStrategy::KD_MSE, 0.0);
  REQUIRE(log_na.steps.size() == log_kd0.steps.size());
  for (size_t i = 0; i < log_na.steps.size(); i++) {
    CHECK(log_na.steps[i].loss == log_kd0.steps[i].loss);
    CHECK(log_kd0.steps[i].loss_kd == 0.0);
  }
  for (size_t i = 0; i < p_na.size(); i++) CHECK(p_na[i] == p_kd0[i]);

  // with real weight the objective actually differs
  auto [p_kd, log_kd] = run(AdaptStrategy::KD_MSE, 1.0);
  bool kd_active = false;
  for (const StepLog& st : log_kd.steps) {
    CHECK(st.loss == doctest::Approx(st.loss_re + st.loss_kd).epsilon(1e-9));
    if (st.loss_kd > 0.0) kd_active = true;
  }
  CHECK(kd_active);
  bool moved_differently = false;
  for (size_t i = 0; i < p_na.size(); i++) {
    if (p_na[i] != p_kd[i]) moved_differently = true;
  }
  CHECK(moved_differently);
}

TEST_CASE("a frozen copy of the init as teacher starts with zero kd loss") {
  Setup s = tiny_setup();
  auto distant = corrupt_distant(s.docs, 3, 0.2, 0.0, 4);

  Model init_copy(s.vocab, 3, s.cfg, 91);
  SoftLabelStore store = generate_soft_labels(init_copy, distant);

  Model student(s.vocab, 3, s.cfg, 91);  // identical init
  AdaptationPlan plan;
  plan.strategy = AdaptStrategy::KD_MSE;
  plan.pretrain = {1e-3, 1, static_cast<int>(distant.size()), 0.0};
  TrainLog log =
      pretrain_student(student, distant, s.schema, &store, plan,
                       OptimConfig{}, 3);
  REQUIRE(!log.steps.empty());
  // first batch is scored by the untouched init, which is the teacher
  CHECK(log.steps.front().loss_kd == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("missing soft labels and missing stores are rejected") {
  Setup s = tiny_setup();
  auto distant = corrupt_distant(s.docs, 3, 0.2, 0.0, 4);
  Model teacher(s.vocab, 3, s.cfg, 50);

  AdaptationPlan plan;
  plan.strategy = AdaptStrategy::KD_MSE;
  plan.pretrain = {1e-3, 1, 2, 0.0};

  Model student(s.vocab, 3, s.cfg, 60);
  CHECK_THROWS_AS(pretrain_student(student, distant, s.schema, nullptr, plan,
                                   OptimConfig{}, 3),
                  ConfigError);

  // a store generated over a corpus that lacks one document
  std::vector<Document> partial(distant.begin() + 1, distant.end());
  SoftLabelStore sparse = generate_soft_labels(teacher, partial);
  CHECK_THROWS_AS(pretrain_student(student, distant, s.schema, &sparse, plan,
                                   OptimConfig{}, 3),
                  TrainingError);
}

TEST_CASE("stage wrappers train and validate") {
  Setup s = tiny_setup();
  Model model(s.vocab, 3, s.cfg, 5);

  StageConfig stage{5e-3, 2, 3, 0.06};
  TrainLog log =
      train_teacher(model, s.docs, s.schema, stage, OptimConfig{}, 2, &s.docs);
  CHECK(log.epochs.size() == 2);
  CHECK(log.epochs.back().dev_f1 >= 0.0);

  auto before = snapshot(model);
  StageConfig zero{1e-3, 0, 3, 0.06};
  finetune(model, s.docs, s.schema, zero, OptimConfig{}, 2);
  auto after = snapshot(model);
  for (size_t i = 0; i < before.size(); i++) CHECK(before[i] == after[i]);

  std::vector<Document> empty;
  CHECK_THROWS_AS(
      train_teacher(model, empty, s.schema, stage, OptimConfig{}, 2),
      TrainingError);
  CHECK_THROWS_AS(finetune(model, empty, s.schema, stage, OptimConfig{}, 2),
                  TrainingError);
}

TEST_CASE("distilled soft labels reproduce a trained teacher's decisions") {
  Setup s = tiny_setup(13, 5);
  Model teacher(s.vocab, 3, s.cfg, 40);
  StageConfig stage{8e-3, 60, 5, 0.06};
  train_teacher(teacher, s.docs, s.schema, stage, OptimConfig{}, 7);

  SoftLabelStore store = generate_soft_labels(teacher, s.docs);
  int agree = 0, total = 0;
  for (const Document& d : s.docs) {
    Mat logits = teacher.infer_logits(d);
    for (auto [sp, op] : candidate_pairs(d.n_entities())) {
      const Eigen::RowVectorXd* row = store.find(d.doc_id, sp, op);
      REQUIRE(row != nullptr);
      auto from_store = decide(*row);
      auto from_model =
          decide(logits.row(PairMatrix::row(sp, op, d.n_entities())));
      total++;
      if (from_store == from_model) agree++;
    }
  }
  CHECK(agree == total);
}

TEST_SUITE_END();
