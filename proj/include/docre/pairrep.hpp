#pragma once

// Entity-pair representation: grouped bilinear fusion into an n x n pair
// matrix, two-axis attention over it, and the per-pair relation classifier.

#include "docre/autograd.hpp"

#include <cstdint>

namespace docre {

// Pair grid flattened s-major: cell (s, o) lives at row s*n + o. Diagonal
// rows are zero-filled and never read by loss or decoding.
struct PairMatrix {
  int n = 0;
  int d = 0;
  ag::Var G;  // (n*n) x d

  static int row(int s, int o, int n) { return s * n + o; }
  bool diagonal_cell(int s, int o) const { return s == o; }
};

// Grouped bilinear form: output i sums z_s^j W_i^j z_o^j over groups j plus
// a bias. Stored flat as one (k * gs * gs) x d matrix over the grouped outer
// features, gs = d / k.
struct BilinearParams {
  int d = 0;
  int k = 0;
  ag::Tensor w;
  ag::Tensor b;

  BilinearParams() = default;
  BilinearParams(int dim, int groups, uint64_t seed);

  int group_size() const { return d / k; }
  // weight of output dim i, group j, subject coord a, object coord c
  double weight(int i, int j, int a, int c) const;
  double& weight_ref(int i, int j, int a, int c);
};

struct AxialParams {
  int d = 0;
  ag::Tensor wq, wk, wv;  // d x d projections of the pair matrix

  AxialParams() = default;
  AxialParams(int dim, uint64_t seed);
};

struct AxialOptions {
  // exclude each axis' diagonal cell from the softmax keys
  bool mask_diagonal = false;
  // re-project q, k, v from the height-axis output for the width axis
  // instead of projecting both axes from G
  bool stacked = false;
};

struct ClassifierHead {
  int d = 0;
  int classes = 0;
  ag::Tensor w;  // d x c
  ag::Tensor b;  // 1 x c

  ClassifierHead() = default;
  ClassifierHead(int dim, int class_count, uint64_t seed);
};

// z_s, z_o: P x d (one row per pair); returns P x d.
ag::Var grouped_bilinear(ag::Graph& g, ag::Var z_s, ag::Var z_o,
                         BilinearParams& params);

// z rows follow candidate_pairs order (s-major, diagonal skipped).
// Populates every off-diagonal cell; needs n >= 2.
PairMatrix build_pair_matrix(ag::Graph& g, ag::Var z_s_all, ag::Var z_o_all,
                             int n, BilinearParams& params);

// One pass of two-axis attention with residuals chained g -> r_h -> r_w.
// Queries, keys and values are projections of G on both axes unless
// opts.stacked re-projects the second axis from r_h. No softmax scaling.
ag::Var axial_attention(ag::Graph& g, const PairMatrix& pm,
                        AxialParams& params, const AxialOptions& opts = {});

// rep: P x d -> P x c logits; threshold class in column 0.
ag::Var classify(ag::Graph& g, ag::Var rep, ClassifierHead& head);

}  // namespace docre
