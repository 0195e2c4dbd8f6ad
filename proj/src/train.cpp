#include "docre/train.hpp"

#include "docre/common.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace docre {

using ag::Graph;
using ag::Var;

AdamW::AdamW(std::vector<ag::Tensor*> params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (ag::Tensor* p : params_) {
    m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::zero_grad() {
  for (ag::Tensor* p : params_) p->zero_grad();
}

double AdamW::clip_gradients() {
  double sq = 0.0;
  for (ag::Tensor* p : params_) sq += p->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) {
    double scale = cfg_.grad_clip / norm;
    for (ag::Tensor* p : params_) p->grad *= scale;
  }
  return norm;
}

void AdamW::step(double lr) {
  t_++;
  double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);
  for (size_t i = 0; i < params_.size(); i++) {
    ag::Tensor* p = params_[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p->grad;
    v_[i] = cfg_.beta2 * v_[i] +
            (1.0 - cfg_.beta2) * p->grad.cwiseProduct(p->grad);
    Eigen::ArrayXXd m_hat = m_[i].array() / bc1;
    Eigen::ArrayXXd v_hat = v_[i].array() / bc2;
    p->value.array() -= lr * (m_hat / (v_hat.sqrt() + cfg_.eps) +
                              cfg_.weight_decay * p->value.array());
  }
}

double scheduled_lr(double base_lr, long long step, long long total_steps,
                    double warmup_frac) {
  if (total_steps <= 0) return base_lr;
  long long warm = std::llround(warmup_frac * (double)total_steps);
  warm = std::clamp<long long>(warm, 0, total_steps);
  if (step < warm) {
    return base_lr * (double)(step + 1) / (double)warm;
  }
  if (total_steps == warm) return base_lr;
  return base_lr * (double)(total_steps - step) / (double)(total_steps - warm);
}

double dev_micro_f1(Model& model, const std::vector<Document>& docs,
                    const RelationSchema& schema) {
  PredictionSet pred = model_predictions(model, docs);
  PredictionSet gold = gold_set_from_corpus(docs, schema);
  return micro_f1(pred, gold).f1;
}

TrainLog train_model(Model& model, const TrainJob& job) {
  if (job.train == nullptr || job.schema == nullptr) {
    throw TrainingError("train job needs a corpus and a schema");
  }
  const auto& corpus = *job.train;

  std::vector<int> usable;
  std::vector<LabelTensor> labels;
  for (int i = 0; i < (int)corpus.size(); i++) {
    if (corpus[i].n_entities() < 2) continue;
    usable.push_back(i);
    labels.push_back(build_label_tensor(corpus[i], *job.schema));
  }
  if (usable.empty()) {
    throw TrainingError("training corpus has no document with two entities");
  }

  AdamW opt(model.parameters(), job.optim);
  int batch = std::max(1, job.stage.batch_size);
  long long steps_per_epoch = (usable.size() + batch - 1) / batch;
  long long total_steps = steps_per_epoch * job.stage.epochs;

  std::mt19937_64 shuffle_rng(sub_seed(job.seed, "shuffle"));
  std::mt19937_64 dropout_rng(sub_seed(job.seed, "dropout"));

  TrainLog log;
  std::vector<int> order(usable.size());
  for (size_t i = 0; i < order.size(); i++) order[i] = (int)i;

  long long step = 0;
  for (int epoch = 0; epoch < job.stage.epochs; epoch++) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long long epoch_steps = 0;

    for (size_t at = 0; at < order.size(); at += batch) {
      size_t hi = std::min(at + batch, order.size());
      opt.zero_grad();
      double sum_re = 0.0, sum_kd = 0.0;
      for (size_t b = at; b < hi; b++) {
        int idx = order[b];
        const Document& doc = corpus[usable[idx]];
        Graph g;
        DocScores scores = model.score(g, doc, true, dropout_rng);
        Var l_re = model.loss(g, scores, labels[idx]);
        Var total = l_re;
        double kd_val = 0.0;
        if (job.aux) {
          Var l_aux = job.aux(g, doc, scores);
          kd_val = job.aux_weight * l_aux.scalar();
          total = g.add(l_re, g.scale(l_aux, job.aux_weight));
        }
        // mean over the documents of the batch
        Var scaled = g.scale(total, 1.0 / (double)(hi - at));
        g.backward(scaled);
        sum_re += l_re.scalar();
        sum_kd += kd_val;
      }
      double mean_re = sum_re / (double)(hi - at);
      double mean_kd = sum_kd / (double)(hi - at);
      double mean_total = mean_re + mean_kd;
      if (!std::isfinite(mean_total)) {
        throw TrainingError("loss diverged at step " + std::to_string(step) +
                            " (epoch " + std::to_string(epoch) + "): " +
                            std::to_string(mean_total));
      }
      opt.clip_gradients();
      double lr = scheduled_lr(job.stage.lr, step, total_steps,
                               job.stage.warmup_frac);
      opt.step(lr);

      log.steps.push_back({step, lr, mean_total, mean_re, mean_kd});
      epoch_loss += mean_total;
      epoch_steps++;
      step++;
    }

    EpochLog el;
    el.epoch = epoch;
    el.mean_loss = epoch_steps > 0 ? epoch_loss / (double)epoch_steps : 0.0;
    if (job.dev != nullptr) {
      PredictionSet pred = model_predictions(model, *job.dev);
      PredictionSet gold = gold_set_from_corpus(*job.dev, *job.schema);
      el.dev_f1 = micro_f1(pred, gold).f1;
      if (job.fact_index != nullptr) {
        el.dev_ign_f1 =
            ign_f1(pred, gold, *job.fact_index, *job.schema, *job.dev).f1;
      }
    }
    log.epochs.push_back(el);
  }
  return log;
}

}  // namespace docre
