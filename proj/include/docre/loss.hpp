#pragma once

// Multi-label losses built around the learned threshold class: the focal
// variant that ranks each positive against the threshold individually, the
// baseline that ranks positives jointly, a plain binary variant, and the
// shared threshold decision rule.

#include "docre/autograd.hpp"
#include "docre/corpus.hpp"

#include <string>
#include <vector>

namespace docre {

// Per-pair target: positive relation indices; everything else is negative.
// An empty set is the no-relation case. The threshold class is never listed.
struct PairTarget {
  std::vector<int> positives;
};

enum class LossVariant { AFL, ATL, BCE };

LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossVariant v);

struct LossConfig {
  LossVariant variant = LossVariant::AFL;
  double gamma = 0.5;  // focal exponent, AFL only
};

// logits: 1 x c row with the threshold class in column 0 and relation r in
// column r + 1. Each positive is ranked against the threshold on its own;
// the threshold term softmaxes over the negatives plus the threshold class.
ag::Var afl_loss(ag::Graph& g, ag::Var logits, const PairTarget& target,
                 double gamma);

// Positives ranked together: one softmax over positives plus the threshold.
ag::Var atl_loss(ag::Graph& g, ag::Var logits, const PairTarget& target);

// Binary cross-entropy on (l_r - l_th) per relation; diagnostic baseline.
ag::Var bce_loss(ag::Graph& g, ag::Var logits, const PairTarget& target,
                 int num_relations);

// Relations whose logit strictly exceeds the threshold logit. Empty result
// means no relation.
std::vector<int> decide(const Eigen::RowVectorXd& logits);

// logits: (n*n) x c grid rows (s-major). Mean of per-pair losses over the
// off-diagonal cells, or over cells where cell_mask is true when given
// (cell_mask indexed by grid row, must still exclude the diagonal).
// Throws when no cell is active.
ag::Var batch_loss(ag::Graph& g, ag::Var logits, const LabelTensor& labels,
                   const LossConfig& cfg,
                   const std::vector<bool>* cell_mask = nullptr);

}  // namespace docre
