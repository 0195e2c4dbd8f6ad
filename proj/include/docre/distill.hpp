#pragma once

// Distant-supervision adaptation: teacher training, soft-label generation
// and storage, the MSE / KL distillation objectives and the combined
// pretrain-then-finetune pipelines (Naive Adaptation and both KD variants).

#include "docre/model.hpp"
#include "docre/train.hpp"

#include <map>
#include <string>
#include <vector>

namespace docre {

enum class AdaptStrategy { NA, KD_MSE, KD_KL };

AdaptStrategy adapt_strategy_from_string(const std::string& s);
std::string adapt_strategy_to_string(AdaptStrategy s);

struct SoftLabelStore {
  uint32_t class_count = 0;
  uint64_t fingerprint = 0;
  // doc -> ordered pair -> teacher logits (1 x class_count)
  std::map<std::string, std::map<std::pair<int, int>, Eigen::RowVectorXd>>
      records;

  size_t size() const;
  const Eigen::RowVectorXd* find(const std::string& doc_id, int s,
                                 int o) const;
};

// Hash of everything that shapes teacher outputs: config, init seed,
// relation count, vocabulary and the current parameter values.
uint64_t teacher_fingerprint(Model& model);

// Inference-mode logits for every ordered pair of every distant document
// (documents with fewer than two entities contribute nothing).
SoftLabelStore generate_soft_labels(Model& teacher,
                                    const std::vector<Document>& distant);

void save_soft_labels(const std::string& path, const SoftLabelStore& store);
SoftLabelStore load_soft_labels(const std::string& path);

// Throws ConfigError unless the store matches the student's class count and,
// when expected_fingerprint is nonzero, the teacher fingerprint.
void require_compatible(const SoftLabelStore& store, int class_count,
                        uint64_t expected_fingerprint);

// Mean squared error over every entry of student (a graph node) against the
// constant teacher matrix of the same shape.
ag::Var kd_mse_loss(ag::Graph& g, ag::Var student,
                    const Eigen::MatrixXd& teacher);

// Row-wise KL(softmax(teacher) || softmax(student)), averaged over rows.
ag::Var kd_kl_loss(ag::Graph& g, ag::Var student,
                   const Eigen::MatrixXd& teacher);

struct AdaptationPlan {
  AdaptStrategy strategy = AdaptStrategy::KD_MSE;
  double kd_weight = 1.0;
  StageConfig pretrain{1e-5, 2, 4, 0.06};
  StageConfig finetune{1e-6, 10, 4, 0.06};
};

TrainLog train_teacher(Model& model, const std::vector<Document>& annotated,
                       const RelationSchema& schema, const StageConfig& stage,
                       const OptimConfig& optim, uint64_t seed,
                       const std::vector<Document>* dev = nullptr);

// Pretraining on distant hard labels; KD strategies add the soft-label term
// (store required, every scored pair must be covered).
TrainLog pretrain_student(Model& model, const std::vector<Document>& distant,
                          const RelationSchema& schema,
                          const SoftLabelStore* store,
                          const AdaptationPlan& plan, const OptimConfig& optim,
                          uint64_t seed,
                          const std::vector<Document>* dev = nullptr);

TrainLog finetune(Model& model, const std::vector<Document>& annotated,
                  const RelationSchema& schema, const StageConfig& stage,
                  const OptimConfig& optim, uint64_t seed,
                  const std::vector<Document>* dev = nullptr);

}  // namespace docre
