#include "docre/pairrep.hpp"

#include "docre/common.hpp"

#include <cmath>
#include <random>

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

}  // namespace

BilinearParams::BilinearParams(int dim, int groups, uint64_t seed)
    : d(dim), k(groups) {
  if (k <= 0 || d <= 0 || d % k != 0) {
    throw ConfigError("grouped bilinear: group count " + std::to_string(k) +
                      " must divide dim " + std::to_string(d));
  }
  int gs = d / k;
  w = ag::Tensor("pair.bilinear.w", uniform_init(k * gs * gs, d, seed));
  b = ag::Tensor("pair.bilinear.b", Mat::Zero(1, d));
}

double BilinearParams::weight(int i, int j, int a, int c) const {
  int gs = group_size();
  return w.value(j * gs * gs + a * gs + c, i);
}

double& BilinearParams::weight_ref(int i, int j, int a, int c) {
  int gs = group_size();
  return w.value(j * gs * gs + a * gs + c, i);
}

AxialParams::AxialParams(int dim, uint64_t seed) : d(dim) {
  wq = ag::Tensor("pair.axial.wq", uniform_init(d, d, seed));
  wk = ag::Tensor("pair.axial.wk", uniform_init(d, d, seed + 1));
  wv = ag::Tensor("pair.axial.wv", uniform_init(d, d, seed + 2));
}

ClassifierHead::ClassifierHead(int dim, int class_count, uint64_t seed)
    : d(dim), classes(class_count) {
  if (class_count < 2) {
    throw ConfigError("classifier needs the threshold class plus relations");
  }
  w = ag::Tensor("pair.cls.w", uniform_init(d, classes, seed));
  b = ag::Tensor("pair.cls.b", Mat::Zero(1, classes));
}

Var grouped_bilinear(Graph& g, Var z_s, Var z_o, BilinearParams& params) {
  if (z_s.cols() != params.d || z_o.cols() != params.d) {
    throw Error("grouped_bilinear: feature dim mismatch");
  }
  Var feats = g.grouped_outer(z_s, z_o, params.k);
  return g.add_rowvec(g.matmul(feats, g.param(params.w)), g.param(params.b));
}

PairMatrix build_pair_matrix(Graph& g, Var z_s_all, Var z_o_all, int n,
                             BilinearParams& params) {
  if (n < 2) {
    throw Error("build_pair_matrix: need at least 2 entities, got " +
                std::to_string(n));
  }
  int p_count = n * (n - 1);
  if (z_s_all.rows() != p_count || z_o_all.rows() != p_count) {
    throw Error("build_pair_matrix: expected " + std::to_string(p_count) +
                " pair rows");
  }
  Var cells = grouped_bilinear(g, z_s_all, z_o_all, params);
  // scatter into the n*n grid; index past the end selects the zero row
  Var with_zero = g.concat_rows({cells, g.input(Mat::Zero(1, params.d))});
  std::vector<int> idx(static_cast<size_t>(n) * n);
  int next = 0;
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < n; ++o) {
      idx[static_cast<size_t>(PairMatrix::row(s, o, n))] =
          (s == o) ? p_count : next++;
    }
  }
  PairMatrix pm;
  pm.n = n;
  pm.d = params.d;
  pm.G = g.gather_rows(with_zero, idx);
  return pm;
}

namespace {

// Attention along one axis: for each fixed line, queries attend over the n
// cells sharing that line. line_rows(i) lists the grid rows of line i in
// attend order; out keeps the same order.
Var line_attention(Graph& g, Var q, Var k, Var v, int n,
                   const std::vector<std::vector<int>>& lines,
                   bool mask_line_cell) {
  std::vector<Var> outs;
  outs.reserve(lines.size());
  for (size_t li = 0; li < lines.size(); ++li) {
    const std::vector<int>& rows = lines[li];
    Var ql = g.gather_rows(q, rows);
    Var kl = g.gather_rows(k, rows);
    Var vl = g.gather_rows(v, rows);
    Var scores = g.matmul(ql, g.transpose(kl));
    if (mask_line_cell) {
      // the line's diagonal grid cell sits at attend position li
      Mat bias = Mat::Zero(n, n);
      bias.col(static_cast<Eigen::Index>(li)).setConstant(-1e9);
      scores = g.add(scores, g.input(bias));
    }
    outs.push_back(g.matmul(g.softmax_rows(scores), vl));
  }
  return g.concat_rows(outs);
}

}  // namespace

Var axial_attention(Graph& g, const PairMatrix& pm, AxialParams& params,
                    const AxialOptions& opts) {
  if (pm.d != params.d) throw Error("axial_attention: dim mismatch");
  int n = pm.n;

  Var q = g.matmul(pm.G, g.param(params.wq));
  Var k = g.matmul(pm.G, g.param(params.wk));
  Var v = g.matmul(pm.G, g.param(params.wv));

  // first axis: cell (s, o) attends over (p, o), the cells in column o
  std::vector<std::vector<int>> cols(static_cast<size_t>(n));
  for (int o = 0; o < n; ++o) {
    for (int p = 0; p < n; ++p) {
      cols[static_cast<size_t>(o)].push_back(PairMatrix::row(p, o, n));
    }
  }
  Var col_out = line_attention(g, q, k, v, n, cols, opts.mask_diagonal);
  // col_out row order is o*n + s; permute back to s-major
  std::vector<int> perm(static_cast<size_t>(n) * n);
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < n; ++o) {
      perm[static_cast<size_t>(s * n + o)] = o * n + s;
    }
  }
  Var r_h = g.add(pm.G, g.gather_rows(col_out, perm));

  // second axis: cell (s, o) attends over (s, p), the cells in row s
  Var q2 = q, k2 = k, v2 = v;
  if (opts.stacked) {
    q2 = g.matmul(r_h, g.param(params.wq));
    k2 = g.matmul(r_h, g.param(params.wk));
    v2 = g.matmul(r_h, g.param(params.wv));
  }
  std::vector<std::vector<int>> rows(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    for (int p = 0; p < n; ++p) {
      rows[static_cast<size_t>(s)].push_back(PairMatrix::row(s, p, n));
    }
  }
  Var row_out = line_attention(g, q2, k2, v2, n, rows, opts.mask_diagonal);
  // row_out order is already s-major
  return g.add(r_h, row_out);
}

Var classify(Graph& g, Var rep, ClassifierHead& head) {
  if (rep.cols() != head.d) throw Error("classify: feature dim mismatch");
  return g.add_rowvec(g.matmul(rep, g.param(head.w)), g.param(head.b));
}

}  // namespace docre
