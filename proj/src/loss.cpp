#include "docre/loss.hpp"

#include "docre/common.hpp"

#include <algorithm>

namespace docre {

using ag::Graph;
using ag::Mat;
using ag::Var;

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "afl") return LossVariant::AFL;
  if (s == "atl") return LossVariant::ATL;
  if (s == "bce") return LossVariant::BCE;
  throw ConfigError("unknown loss variant '" + s + "' (afl, atl, bce)");
}

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::AFL: return "afl";
    case LossVariant::ATL: return "atl";
    default: return "bce";
  }
}

namespace {

void check_target(const PairTarget& t, int num_relations) {
  for (int r : t.positives) {
    if (r < 0 || r >= num_relations) {
      throw Error("loss: positive relation index " + std::to_string(r) +
                  " outside [0, " + std::to_string(num_relations) + ")");
    }
  }
}

// (1 - P)^gamma * (-log P) with P = sigmoid(delta), delta = l_r - l_th.
// -log P = softplus(-delta); (1 - P)^gamma = exp(-gamma * softplus(delta)).
Var focal_term(Graph& g, Var delta, double gamma) {
  Var neg_log_p = g.softplus(g.neg(delta));
  if (gamma == 0.0) return neg_log_p;
  return g.cmul(g.exp(g.scale(g.softplus(delta), -gamma)), neg_log_p);
}

}  // namespace

Var afl_loss(Graph& g, Var logits, const PairTarget& target, double gamma) {
  if (logits.rows() != 1) throw Error("afl_loss: expected one logit row");
  if (gamma < 0.0) throw ConfigError("afl_loss: gamma must be nonnegative");
  int c = static_cast<int>(logits.cols());
  check_target(target, c - 1);

  Var th = g.slice_cols(logits, 0, 1);
  Mat neg_mask = Mat::Zero(1, c);
  neg_mask(0, 0) = 1.0;
  for (int col = 1; col < c; ++col) neg_mask(0, col) = 1.0;
  for (int r : target.positives) neg_mask(0, r + 1) = 0.0;
  Var total = g.sub(g.masked_logsumexp_rows(logits, neg_mask), th);

  for (int r : target.positives) {
    Var delta = g.sub(g.slice_cols(logits, r + 1, 1), th);
    total = g.add(total, focal_term(g, delta, gamma));
  }
  return total;
}

Var atl_loss(Graph& g, Var logits, const PairTarget& target) {
  if (logits.rows() != 1) throw Error("atl_loss: expected one logit row");
  int c = static_cast<int>(logits.cols());
  check_target(target, c - 1);

  Var th = g.slice_cols(logits, 0, 1);
  Mat neg_mask = Mat::Ones(1, c);
  for (int r : target.positives) neg_mask(0, r + 1) = 0.0;
  Var total = g.sub(g.masked_logsumexp_rows(logits, neg_mask), th);

  if (!target.positives.empty()) {
    Mat pos_mask = Mat::Zero(1, c);
    pos_mask(0, 0) = 1.0;
    for (int r : target.positives) pos_mask(0, r + 1) = 1.0;
    Var lse_pos = g.masked_logsumexp_rows(logits, pos_mask);
    for (int r : target.positives) {
      total = g.add(total, g.sub(lse_pos, g.slice_cols(logits, r + 1, 1)));
    }
  }
  return total;
}

Var bce_loss(Graph& g, Var logits, const PairTarget& target,
             int num_relations) {
  if (logits.rows() != 1) throw Error("bce_loss: expected one logit row");
  if (num_relations != logits.cols() - 1) {
    throw Error("bce_loss: relation count mismatch");
  }
  check_target(target, num_relations);

  Var th = g.slice_cols(logits, 0, 1);
  Var rel = g.slice_cols(logits, 1, num_relations);
  Var delta = g.sub(rel, g.matmul(th, g.input(Mat::Ones(1, num_relations))));
  Mat pos = Mat::Zero(1, num_relations);
  for (int r : target.positives) pos(0, r) = 1.0;
  Mat neg = Mat::Ones(1, num_relations) - pos;
  Var term = g.add(g.cmul_const(g.softplus(g.neg(delta)), pos),
                   g.cmul_const(g.softplus(delta), neg));
  return g.row_sums(term);
}

std::vector<int> decide(const Eigen::RowVectorXd& logits) {
  std::vector<int> out;
  double th = logits(0);
  for (Eigen::Index col = 1; col < logits.size(); ++col) {
    if (logits(col) > th) out.push_back(static_cast<int>(col) - 1);
  }
  return out;
}

Var batch_loss(Graph& g, Var logits, const LabelTensor& labels,
               const LossConfig& cfg, const std::vector<bool>* cell_mask) {
  int n = labels.n;
  int rows = n * n;
  int c = static_cast<int>(logits.cols());
  if (logits.rows() != rows) {
    throw Error("batch_loss: expected " + std::to_string(rows) +
                " grid rows, got " + std::to_string(logits.rows()));
  }
  if (c != labels.num_relations + 1) {
    throw Error("batch_loss: class count mismatch");
  }
  if (cell_mask != nullptr && static_cast<int>(cell_mask->size()) != rows) {
    throw Error("batch_loss: cell mask size mismatch");
  }

  std::vector<int> active;  // grid rows entering the mean
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < n; ++o) {
      int row = s * n + o;
      bool want = cell_mask == nullptr || (*cell_mask)[static_cast<size_t>(row)];
      if (s == o) {
        if (cell_mask != nullptr && want) {
          throw Error("batch_loss: cell mask must exclude the diagonal");
        }
        continue;
      }
      if (want) active.push_back(row);
    }
  }
  if (active.empty()) throw Error("batch_loss: no active pairs");

  Var th_col = g.slice_cols(logits, 0, 1);
  Var sum;

  if (cfg.variant == LossVariant::BCE) {
    int R = labels.num_relations;
    Var delta = g.sub(g.slice_cols(logits, 1, R),
                      g.matmul(th_col, g.input(Mat::Ones(1, R))));
    Mat pos = Mat::Zero(rows, R);
    Mat neg = Mat::Zero(rows, R);
    for (int row : active) {
      int s = row / n, o = row % n;
      for (int r = 0; r < R; ++r) {
        if (labels.get(s, o, r)) {
          pos(row, r) = 1.0;
        } else {
          neg(row, r) = 1.0;
        }
      }
    }
    sum = g.sum_all(g.add(g.cmul_const(g.softplus(g.neg(delta)), pos),
                          g.cmul_const(g.softplus(delta), neg)));
  } else {
    // threshold terms: lse over negatives plus threshold, minus threshold
    Mat neg_mask = Mat::Zero(rows, c);
    Mat active_ind = Mat::Zero(rows, 1);
    for (int row : active) {
      int s = row / n, o = row % n;
      active_ind(row, 0) = 1.0;
      neg_mask(row, 0) = 1.0;
      for (int r = 0; r < labels.num_relations; ++r) {
        if (!labels.get(s, o, r)) neg_mask(row, r + 1) = 1.0;
      }
    }
    Var th_terms = g.cmul_const(
        g.sub(g.masked_logsumexp_rows(logits, neg_mask), th_col), active_ind);
    sum = g.sum_all(th_terms);

    // flattened positives across active pairs
    std::vector<int> pos_rows;
    std::vector<std::pair<int, int>> pos_entries;  // (grid row, relation)
    for (int row : active) {
      int s = row / n, o = row % n;
      for (int r : labels.positive_relations(s, o)) {
        pos_rows.push_back(row);
        pos_entries.emplace_back(row, r);
      }
    }
    if (!pos_entries.empty()) {
      int K = static_cast<int>(pos_entries.size());
      Var rows_k = g.gather_rows(logits, pos_rows);
      Mat onehot = Mat::Zero(K, c);
      for (int i = 0; i < K; ++i) {
        onehot(i, pos_entries[static_cast<size_t>(i)].second + 1) = 1.0;
      }
      Var pos_logit = g.row_sums(g.cmul_const(rows_k, onehot));
      Var th_k = g.gather_rows(th_col, pos_rows);
      Var delta = g.sub(pos_logit, th_k);
      if (cfg.variant == LossVariant::AFL) {
        sum = g.add(sum, g.sum_all(focal_term(g, delta, cfg.gamma)));
      } else {
        // joint ranking: lse over each pair's positives plus threshold
        Mat pos_mask = Mat::Zero(rows, c);
        for (int row : active) {
          int s = row / n, o = row % n;
          auto prs = labels.positive_relations(s, o);
          if (prs.empty()) continue;
          pos_mask(row, 0) = 1.0;
          for (int r : prs) pos_mask(row, r + 1) = 1.0;
        }
        Var lse_pos = g.masked_logsumexp_rows(logits, pos_mask);
        Var lse_k = g.gather_rows(lse_pos, pos_rows);
        sum = g.add(sum, g.sum_all(g.sub(lse_k, pos_logit)));
      }
    }
  }
  return g.scale(sum, 1.0 / static_cast<double>(active.size()));
}

}  // namespace docre
