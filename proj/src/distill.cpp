#include "docre/distill.hpp"

#include "docre/common.hpp"
#include "docre/io.hpp"
#include "docre/pairrep.hpp"

#include <cmath>
#include <cstring>

namespace docre {

using ag::Graph;
using ag::Mat;
using ag::Var;

AdaptStrategy adapt_strategy_from_string(const std::string& s) {
  if (s == "na") return AdaptStrategy::NA;
  if (s == "kd_mse") return AdaptStrategy::KD_MSE;
  if (s == "kd_kl") return AdaptStrategy::KD_KL;
  throw ConfigError("unknown adaptation strategy '" + s +
                    "' (expected na, kd_mse or kd_kl)");
}

std::string adapt_strategy_to_string(AdaptStrategy s) {
  switch (s) {
    case AdaptStrategy::NA: return "na";
    case AdaptStrategy::KD_MSE: return "kd_mse";
    case AdaptStrategy::KD_KL: return "kd_kl";
  }
  throw ConfigError("bad adaptation strategy value");
}

size_t SoftLabelStore::size() const {
  size_t n = 0;
  for (const auto& [doc, pairs] : records) n += pairs.size();
  return n;
}

const Eigen::RowVectorXd* SoftLabelStore::find(const std::string& doc_id,
                                               int s, int o) const {
  auto doc_it = records.find(doc_id);
  if (doc_it == records.end()) return nullptr;
  auto pair_it = doc_it->second.find({s, o});
  if (pair_it == doc_it->second.end()) return nullptr;
  return &pair_it->second;
}

uint64_t teacher_fingerprint(Model& model) {
  std::string blob = model.config().to_json().dump();
  blob += '|';
  blob += std::to_string(model.seed());
  blob += '|';
  blob += std::to_string(model.num_relations());
  for (const std::string& tok : model.vocab().tokens) {
    blob += '\x1f';
    blob += tok;
  }
  // parameter values decide the outputs, so a trained teacher and a fresh one
  // with the same config never share a fingerprint
  for (ag::Tensor* t : model.parameters()) {
    blob += '\x1f';
    blob += t->name;
    size_t at = blob.size();
    blob.resize(at + sizeof(double) * t->value.size());
    std::memcpy(blob.data() + at, t->value.data(),
                sizeof(double) * t->value.size());
  }
  return fnv1a64(blob);
}

SoftLabelStore generate_soft_labels(Model& teacher,
                                    const std::vector<Document>& distant) {
  SoftLabelStore store;
  store.class_count = (uint32_t)teacher.num_classes();
  store.fingerprint = teacher_fingerprint(teacher);
  for (const Document& doc : distant) {
    int n = doc.n_entities();
    if (n < 2) continue;
    Mat logits = teacher.infer_logits(doc);
    auto& pairs = store.records[doc.doc_id];
    for (auto [s, o] : candidate_pairs(n)) {
      pairs[{s, o}] = logits.row(PairMatrix::row(s, o, n));
    }
  }
  return store;
}

// Store layout: "DRSL" | u32 version | u32 class_count | u64 fingerprint |
// u64 record count | records sorted by (doc_id, s, o), each
// str doc_id | u32 s | u32 o | class_count raw doubles.
namespace {

constexpr char kMagic[4] = {'D', 'R', 'S', 'L'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

struct Reader {
  const std::string& data;
  size_t at = 0;
  const std::string path;

  void need(size_t n) const {
    if (at + n > data.size()) {
      throw IoError("soft-label store " + path + ": truncated at byte " +
                    std::to_string(at));
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data.data() + at, 4);
    at += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data.data() + at, 8);
    at += 8;
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = data.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace

void save_soft_labels(const std::string& path, const SoftLabelStore& store) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, store.class_count);
  put_u64(out, store.fingerprint);
  put_u64(out, (uint64_t)store.size());
  for (const auto& [doc, pairs] : store.records) {
    for (const auto& [key, logits] : pairs) {
      put_u32(out, (uint32_t)doc.size());
      out.append(doc);
      put_u32(out, (uint32_t)key.first);
      put_u32(out, (uint32_t)key.second);
      size_t off = out.size();
      size_t bytes = sizeof(double) * (size_t)logits.size();
      out.resize(off + bytes);
      std::memcpy(out.data() + off, logits.data(), bytes);
    }
  }
  write_file_atomic(path, out);
}

SoftLabelStore load_soft_labels(const std::string& path) {
  std::string data = read_file_string(path);
  Reader r{data, 0, path};
  r.need(4);
  if (std::memcmp(data.data(), kMagic, 4) != 0) {
    throw IoError("soft-label store " + path + ": bad magic");
  }
  r.at = 4;
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("soft-label store " + path + ": unsupported version " +
                  std::to_string(version));
  }
  SoftLabelStore store;
  store.class_count = r.u32();
  if (store.class_count < 2) {
    throw IoError("soft-label store " + path + ": class count " +
                  std::to_string(store.class_count) + " is too small");
  }
  store.fingerprint = r.u64();
  uint64_t count = r.u64();
  for (uint64_t i = 0; i < count; i++) {
    std::string doc = r.str();
    uint32_t s = r.u32();
    uint32_t o = r.u32();
    size_t bytes = sizeof(double) * store.class_count;
    r.need(bytes);
    Eigen::RowVectorXd logits(store.class_count);
    std::memcpy(logits.data(), data.data() + r.at, bytes);
    r.at += bytes;
    store.records[doc][{(int)s, (int)o}] = std::move(logits);
  }
  if (r.at != data.size()) {
    throw IoError("soft-label store " + path + ": trailing bytes");
  }
  return store;
}

void require_compatible(const SoftLabelStore& store, int class_count,
                        uint64_t expected_fingerprint) {
  if ((int)store.class_count != class_count) {
    throw ConfigError("soft-label store holds " +
                      std::to_string(store.class_count) +
                      " classes, expected " + std::to_string(class_count));
  }
  if (expected_fingerprint != 0 &&
      store.fingerprint != expected_fingerprint) {
    throw ConfigError("soft-label store teacher fingerprint mismatch");
  }
}

Var kd_mse_loss(Graph& g, Var student, const Mat& teacher) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw TrainingError(
        "kd_mse_loss: student is " + std::to_string(student.rows()) + "x" +
        std::to_string(student.cols()) + ", teacher is " +
        std::to_string(teacher.rows()) + "x" + std::to_string(teacher.cols()));
  }
  Var diff = g.sub(student, g.input(teacher));
  return g.mean_all(g.cmul(diff, diff));
}

Var kd_kl_loss(Graph& g, Var student, const Mat& teacher) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw TrainingError(
        "kd_kl_loss: student is " + std::to_string(student.rows()) + "x" +
        std::to_string(student.cols()) + ", teacher is " +
        std::to_string(teacher.rows()) + "x" + std::to_string(teacher.cols()));
  }
  // p = softmax(teacher) row-wise, computed outside the graph (constant)
  Mat p(teacher.rows(), teacher.cols());
  Eigen::VectorXd plogp(teacher.rows());
  for (Eigen::Index r = 0; r < teacher.rows(); r++) {
    double mx = teacher.row(r).maxCoeff();
    Eigen::ArrayXd e = (teacher.row(r).array() - mx).exp();
    Eigen::ArrayXd pr = e / e.sum();
    p.row(r) = pr.matrix();
    plogp(r) = (pr * (pr + 1e-300).log()).sum();
  }
  // KL row = sum p log p - sum p log q, with log q = student - lse(student)
  Var lse = g.logsumexp_rows(student);                        // rows x 1
  Var p_dot_student = g.row_sums(g.cmul(g.input(p), student));  // rows x 1
  Var plogq = g.sub(p_dot_student, lse);  // sum_c p_c = 1 folds lse in
  Var kl_rows = g.sub(g.input(plogp), plogq);
  return g.mean_all(kl_rows);
}

TrainLog train_teacher(Model& model, const std::vector<Document>& annotated,
                       const RelationSchema& schema, const StageConfig& stage,
                       const OptimConfig& optim, uint64_t seed,
                       const std::vector<Document>* dev) {
  if (annotated.empty()) {
    throw TrainingError("teacher training needs a non-empty corpus");
  }
  TrainJob job;
  job.train = &annotated;
  job.schema = &schema;
  job.stage = stage;
  job.optim = optim;
  job.seed = seed;
  job.dev = dev;
  return train_model(model, job);
}

TrainLog pretrain_student(Model& model, const std::vector<Document>& distant,
                          const RelationSchema& schema,
                          const SoftLabelStore* store,
                          const AdaptationPlan& plan, const OptimConfig& optim,
                          uint64_t seed, const std::vector<Document>* dev) {
  if (distant.empty()) {
    throw TrainingError("pretraining needs a non-empty distant corpus");
  }
  TrainJob job;
  job.train = &distant;
  job.schema = &schema;
  job.stage = plan.pretrain;
  job.optim = optim;
  job.seed = seed;
  job.dev = dev;

  if (plan.strategy != AdaptStrategy::NA) {
    if (store == nullptr) {
      throw ConfigError("strategy " + adapt_strategy_to_string(plan.strategy) +
                        " needs a soft-label store");
    }
    require_compatible(*store, model.num_classes(), 0);
    bool use_mse = plan.strategy == AdaptStrategy::KD_MSE;
    job.aux_weight = plan.kd_weight;
    job.aux = [store, use_mse](Graph& g, const Document& doc,
                               const DocScores& scores) -> Var {
      int n = scores.n;
      auto pairs = candidate_pairs(n);
      std::vector<int> rows;
      rows.reserve(pairs.size());
      Mat teacher(pairs.size(), scores.logits.cols());
      for (size_t i = 0; i < pairs.size(); i++) {
        auto [s, o] = pairs[i];
        const Eigen::RowVectorXd* t = store->find(doc.doc_id, s, o);
        if (t == nullptr) {
          throw TrainingError("no soft label for doc '" + doc.doc_id +
                              "' pair (" + std::to_string(s) + ", " +
                              std::to_string(o) + ")");
        }
        teacher.row(i) = *t;
        rows.push_back(PairMatrix::row(s, o, n));
      }
      Var student = g.gather_rows(scores.logits, rows);
      return use_mse ? kd_mse_loss(g, student, teacher)
                     : kd_kl_loss(g, student, teacher);
    };
  }
  return train_model(model, job);
}

TrainLog finetune(Model& model, const std::vector<Document>& annotated,
                  const RelationSchema& schema, const StageConfig& stage,
                  const OptimConfig& optim, uint64_t seed,
                  const std::vector<Document>* dev) {
  if (annotated.empty()) {
    throw TrainingError("finetuning needs a non-empty corpus");
  }
  TrainJob job;
  job.train = &annotated;
  job.schema = &schema;
  job.stage = stage;
  job.optim = optim;
  job.seed = seed;
  job.dev = dev;
  return train_model(model, job);
}

}  // namespace docre
