#pragma once

// Optimization: AdamW with decoupled weight decay, linear warmup/decay
// scheduling, global gradient-norm clipping and the document-batched
// training loop shared by every training stage.

#include "docre/corpus.hpp"
#include "docre/model.hpp"

#include <functional>
#include <vector>

namespace docre {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
};

class AdamW {
 public:
  AdamW(std::vector<ag::Tensor*> params, const OptimConfig& cfg);

  void zero_grad();
  // Scales all gradients so their global L2 norm is at most cfg.grad_clip;
  // returns the pre-clip norm.
  double clip_gradients();
  void step(double lr);
  long long steps_taken() const { return t_; }

 private:
  std::vector<ag::Tensor*> params_;
  OptimConfig cfg_;
  std::vector<Eigen::MatrixXd> m_, v_;
  long long t_ = 0;
};

// Linear warmup to base_lr over warmup_frac of total_steps, then linear
// decay to zero at total_steps.
double scheduled_lr(double base_lr, long long step, long long total_steps,
                    double warmup_frac);

struct StageConfig {
  double lr = 1e-5;
  int epochs = 2;
  int batch_size = 4;
  double warmup_frac = 0.06;
};

struct StepLog {
  long long step = 0;
  double lr = 0.0;
  double loss = 0.0;     // loss_re + loss_kd, always
  double loss_re = 0.0;  // per-batch mean hard-label loss
  double loss_kd = 0.0;  // weighted distillation contribution, 0 without KD
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double dev_f1 = -1.0;      // -1 when no dev set was given
  double dev_ign_f1 = -1.0;  // -1 when no fact index was given
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

// Optional per-document auxiliary objective (distillation plugs in here);
// returns an extra loss term for the scored document.
using AuxLossHook =
    std::function<ag::Var(ag::Graph&, const Document&, const DocScores&)>;

struct TrainJob {
  const std::vector<Document>* train = nullptr;
  const RelationSchema* schema = nullptr;
  StageConfig stage;
  OptimConfig optim;
  uint64_t seed = 1;
  // optional epoch-end evaluation
  const std::vector<Document>* dev = nullptr;
  const FactIndex* fact_index = nullptr;
  // optional auxiliary loss, scaled by aux_weight and added to the hard loss
  AuxLossHook aux = nullptr;
  double aux_weight = 1.0;
};

// Runs the job, mutating the model parameters in place. Documents with fewer
// than two entities are skipped. Throws TrainingError on an empty corpus or
// when the loss stops being finite.
TrainLog train_model(Model& model, const TrainJob& job);

// Micro F1 of threshold decisions against the gold facts of `docs`.
double dev_micro_f1(Model& model, const std::vector<Document>& docs,
                    const RelationSchema& schema);

}  // namespace docre
