#include "doctest.h"

#include "docre/common.hpp"
#include "docre/corpus.hpp"
#include "docre/pairrep.hpp"
#include "test_util.hpp"

#include <random>

using namespace docre;
using ag::Graph;
using ag::Mat;
using ag::Var;

namespace {

// literal evaluation of the grouped bilinear sum, one output dim at a time
Mat bilinear_oracle(const Mat& zs, const Mat& zo, const BilinearParams& p) {
  int gs = p.group_size();
  Mat out(zs.rows(), p.d);
  for (Eigen::Index row = 0; row < zs.rows(); ++row) {
    for (int i = 0; i < p.d; ++i) {
      double acc = p.b.value(0, i);
      for (int j = 0; j < p.k; ++j) {
        for (int a = 0; a < gs; ++a) {
          for (int c = 0; c < gs; ++c) {
            acc += zs(row, j * gs + a) * p.weight(i, j, a, c) *
                   zo(row, j * gs + c);
          }
        }
      }
      out(row, i) = acc;
    }
  }
  return out;
}

PairMatrix manual_pair_matrix(Graph& g, const Mat& grid, int n, int d) {
  PairMatrix pm;
  pm.n = n;
  pm.d = d;
  pm.G = g.input(grid);
  return pm;
}

}  // namespace

TEST_SUITE_BEGIN("pairrep");

TEST_CASE("grouped bilinear: zero weights give the bias") {
  BilinearParams p(4, 2, 1);
  p.w.value.setZero();
  p.b.value << 0.1, -0.2, 0.3, 0.0;
  std::mt19937_64 rng(2);
  Mat zs = testutil::rand_mat(3, 4, rng), zo = testutil::rand_mat(3, 4, rng);
  Graph g;
  Var out = grouped_bilinear(g, g.input(zs), g.input(zo), p);
  for (int row = 0; row < 3; ++row) {
    for (int i = 0; i < 4; ++i) {
      CHECK(out.value()(row, i) == doctest::Approx(p.b.value(0, i)));
    }
  }
}

TEST_CASE("grouped bilinear: identity weights give the dot product") {
  BilinearParams p(2, 1, 1);
  p.w.value.setZero();
  p.b.value.setZero();
  for (int i = 0; i < 2; ++i) {
    for (int a = 0; a < 2; ++a) p.weight_ref(i, 0, a, a) = 1.0;
  }
  Mat zs(1, 2), zo(1, 2);
  zs << 0.5, -1.5;
  zo << 2.0, 0.25;
  Graph g;
  Var out = grouped_bilinear(g, g.input(zs), g.input(zo), p);
  double dot = zs.row(0).dot(zo.row(0));
  CHECK(out.value()(0, 0) == doctest::Approx(dot));
  CHECK(out.value()(0, 1) == doctest::Approx(dot));
}

TEST_CASE("grouped bilinear agrees with the triple-loop oracle") {
  std::mt19937_64 rng(3);
  for (int d : {4, 8}) {
    for (int k : {1, 2, 4}) {
      BilinearParams p(d, k, 17 + static_cast<uint64_t>(d * 10 + k));
      p.b.value = testutil::rand_mat(1, d, rng);
      Mat zs = testutil::rand_mat(5, d, rng), zo = testutil::rand_mat(5, d, rng);
      Graph g;
      Var out = grouped_bilinear(g, g.input(zs), g.input(zo), p);
      Mat expect = bilinear_oracle(zs, zo, p);
      double rel = (out.value() - expect).cwiseAbs().maxCoeff() /
                   (expect.cwiseAbs().maxCoeff() + 1e-12);
      CAPTURE(d);
      CAPTURE(k);
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("grouped bilinear is bilinear: scaling a side scales (g - b)") {
  std::mt19937_64 rng(4);
  BilinearParams p(4, 2, 5);
  p.b.value = testutil::rand_mat(1, 4, rng);
  Mat zs = testutil::rand_mat(2, 4, rng), zo = testutil::rand_mat(2, 4, rng);
  Graph g;
  Mat base = grouped_bilinear(g, g.input(zs), g.input(zo), p).value();
  Mat scaled = grouped_bilinear(g, g.input(Mat(2.5 * zs)), g.input(zo), p).value();
  for (int row = 0; row < 2; ++row) {
    for (int i = 0; i < 4; ++i) {
      double lhs = scaled(row, i) - p.b.value(0, i);
      double rhs = 2.5 * (base(row, i) - p.b.value(0, i));
      CHECK(lhs == doctest::Approx(rhs));
    }
  }
  CHECK_THROWS_AS(BilinearParams(6, 4, 1), ConfigError);
}

TEST_CASE("pair matrix: populated cells match per-pair calls, diagonal zero") {
  std::mt19937_64 rng(6);
  int d = 4, n = 3;
  BilinearParams p(d, 2, 7);
  auto pairs = candidate_pairs(n);
  Mat zs = testutil::rand_mat(static_cast<int>(pairs.size()), d, rng);
  Mat zo = testutil::rand_mat(static_cast<int>(pairs.size()), d, rng);
  Graph g;
  PairMatrix pm = build_pair_matrix(g, g.input(zs), g.input(zo), n, p);
  REQUIRE(pm.G.rows() == n * n);
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto [s, o] = pairs[i];
    Var direct = grouped_bilinear(g, g.input(Mat(zs.row(static_cast<int>(i)))),
                                  g.input(Mat(zo.row(static_cast<int>(i)))), p);
    for (int j = 0; j < d; ++j) {
      CHECK(pm.G.value()(PairMatrix::row(s, o, n), j) ==
            doctest::Approx(direct.value()(0, j)));
    }
  }
  for (int s = 0; s < n; ++s) {
    CHECK(pm.G.value().row(PairMatrix::row(s, s, n)).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK_THROWS_AS(build_pair_matrix(g, g.input(zs), g.input(zo), 1, p), Error);
}

TEST_CASE("pair matrix with two entities: two cells live, two dead") {
  std::mt19937_64 rng(7);
  BilinearParams p(4, 1, 8);
  Mat zs = testutil::rand_mat(2, 4, rng), zo = testutil::rand_mat(2, 4, rng);
  Graph g;
  PairMatrix pm = build_pair_matrix(g, g.input(zs), g.input(zo), 2, p);
  CHECK(pm.G.value().row(0).cwiseAbs().maxCoeff() == 0.0);  // (0,0)
  CHECK(pm.G.value().row(3).cwiseAbs().maxCoeff() == 0.0);  // (1,1)
  CHECK(pm.G.value().row(1).cwiseAbs().maxCoeff() > 0.0);
  CHECK(pm.G.value().row(2).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("symmetric weights and shared z make the pair matrix symmetric") {
  std::mt19937_64 rng(8);
  int d = 4, n = 3;
  BilinearParams p(d, 2, 9);
  int gs = p.group_size();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < p.k; ++j) {
      for (int a = 0; a < gs; ++a) {
        for (int c = a + 1; c < gs; ++c) {
          p.weight_ref(i, j, c, a) = p.weight(i, j, a, c);
        }
      }
    }
  }
  Mat z_ent = testutil::rand_mat(n, d, rng);  // one z per entity
  auto pairs = candidate_pairs(n);
  Mat zs(static_cast<int>(pairs.size()), d), zo(static_cast<int>(pairs.size()), d);
  for (size_t i = 0; i < pairs.size(); ++i) {
    zs.row(static_cast<int>(i)) = z_ent.row(pairs[i].first);
    zo.row(static_cast<int>(i)) = z_ent.row(pairs[i].second);
  }
  Graph g;
  PairMatrix pm = build_pair_matrix(g, g.input(zs), g.input(zo), n, p);
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < n; ++o) {
      if (s == o) continue;
      for (int j = 0; j < d; ++j) {
        CHECK(pm.G.value()(PairMatrix::row(s, o, n), j) ==
              doctest::Approx(pm.G.value()(PairMatrix::row(o, s, n), j)));
      }
    }
  }
}

TEST_CASE("axial attention: uniform softmax oracle") {
  // zero query/key projections give uniform attention; identity values turn
  // each axis into a mean over its line
  std::mt19937_64 rng(9);
  int d = 3, n = 4;
  AxialParams ax(d, 11);
  ax.wq.value.setZero();
  ax.wk.value.setZero();
  ax.wv.value = Mat::Identity(d, d);
  Mat grid = testutil::rand_mat(n * n, d, rng);
  for (int s = 0; s < n; ++s) grid.row(PairMatrix::row(s, s, n)).setZero();
  Graph g;
  PairMatrix pm = manual_pair_matrix(g, grid, n, d);
  Var out = axial_attention(g, pm, ax);
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < n; ++o) {
      for (int j = 0; j < d; ++j) {
        double col_mean = 0.0, row_mean = 0.0;
        for (int p = 0; p < n; ++p) {
          col_mean += grid(PairMatrix::row(p, o, n), j);
          row_mean += grid(PairMatrix::row(s, p, n), j);
        }
        col_mean /= n;
        row_mean /= n;
        double expect = grid(PairMatrix::row(s, o, n), j) + col_mean + row_mean;
        CHECK(out.value()(PairMatrix::row(s, o, n), j) ==
              doctest::Approx(expect));
      }
    }
  }
}

TEST_CASE("axial attention on a single cell follows the literal formula") {
  // one cell: each axis' softmax is over a single element, so with identity
  // values both residual additions add the cell itself back: 3g
  Graph g;
  Mat grid(1, 3);
  grid << 0.4, -1.0, 2.0;
  AxialParams ax(3, 12);
  ax.wq.value.setZero();
  ax.wk.value.setZero();
  ax.wv.value = Mat::Identity(3, 3);
  PairMatrix pm = manual_pair_matrix(g, grid, 1, 3);
  Var out = axial_attention(g, pm, ax);
  for (int j = 0; j < 3; ++j) {
    CHECK(out.value()(0, j) == doctest::Approx(3.0 * grid(0, j)));
  }
}

TEST_CASE("axial attention with zero values is the identity") {
  std::mt19937_64 rng(10);
  int d = 4, n = 3;
  AxialParams ax(d, 13);
  ax.wv.value.setZero();
  Mat grid = testutil::rand_mat(n * n, d, rng);
  Graph g;
  PairMatrix pm = manual_pair_matrix(g, grid, n, d);
  Var out = axial_attention(g, pm, ax);
  CHECK((out.value() - grid).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("axial attention commutes with entity relabeling") {
  std::mt19937_64 rng(11);
  int d = 4;
  for (int n = 2; n <= 8; ++n) {
    AxialParams ax(d, 20 + static_cast<uint64_t>(n));
    Mat grid = testutil::rand_mat(n * n, d, rng);
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);

    Mat grid_p(n * n, d);
    for (int s = 0; s < n; ++s) {
      for (int o = 0; o < n; ++o) {
        grid_p.row(PairMatrix::row(perm[static_cast<size_t>(s)],
                                   perm[static_cast<size_t>(o)], n)) =
            grid.row(PairMatrix::row(s, o, n));
      }
    }
    Graph g;
    Var out = axial_attention(g, manual_pair_matrix(g, grid, n, d), ax);
    Var out_p = axial_attention(g, manual_pair_matrix(g, grid_p, n, d), ax);
    double worst = 0.0;
    for (int s = 0; s < n; ++s) {
      for (int o = 0; o < n; ++o) {
        for (int j = 0; j < d; ++j) {
          double a = out.value()(PairMatrix::row(s, o, n), j);
          double b = out_p.value()(
              PairMatrix::row(perm[static_cast<size_t>(s)],
                              perm[static_cast<size_t>(o)], n),
              j);
          worst = std::max(worst, std::abs(a - b));
        }
      }
    }
    CAPTURE(n);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("axial toggles change the output but stay finite") {
  std::mt19937_64 rng(12);
  int d = 4, n = 3;
  AxialParams ax(d, 30);
  Mat grid = testutil::rand_mat(n * n, d, rng);
  Graph g;
  PairMatrix pm = manual_pair_matrix(g, grid, n, d);
  Var base = axial_attention(g, pm, ax);
  AxialOptions masked;
  masked.mask_diagonal = true;
  Var with_mask = axial_attention(g, pm, ax, masked);
  AxialOptions stacked;
  stacked.stacked = true;
  Var with_stack = axial_attention(g, pm, ax, stacked);
  CHECK((base.value() - with_mask.value()).cwiseAbs().maxCoeff() > 1e-8);
  CHECK((base.value() - with_stack.value()).cwiseAbs().maxCoeff() > 1e-8);
  CHECK(with_mask.value().allFinite());
  CHECK(with_stack.value().allFinite());
}

TEST_CASE("axial attention gradients reach projections and input") {
  std::mt19937_64 rng(13);
  int d = 3, n = 3;
  AxialParams ax(d, 31);
  Mat grid = testutil::rand_mat(n * n, d, rng);
  Mat w = testutil::rand_mat(n * n, d, rng);
  for (bool stacked : {false, true}) {
    AxialOptions opts;
    opts.stacked = stacked;
    double err = testutil::fd_max_err_params(
        [&](Graph& g) {
          PairMatrix pm = manual_pair_matrix(g, grid, n, d);
          return g.sum_all(g.cmul_const(axial_attention(g, pm, ax, opts), w));
        },
        {&ax.wq, &ax.wk, &ax.wv}, 1e-5);
    CAPTURE(stacked);
    CHECK(err < 1e-5);
  }
  double err_in = testutil::fd_max_err(
      [&](Graph& g, std::vector<Var>& v) {
        PairMatrix pm;
        pm.n = n;
        pm.d = d;
        pm.G = v[0];
        return g.sum_all(g.cmul_const(axial_attention(g, pm, ax), w));
      },
      {grid});
  CHECK(err_in < 1e-5);
}

TEST_CASE("classifier: zero weights give the bias, one-hot picks a row") {
  ClassifierHead head(4, 3, 40);
  head.w.value.setZero();
  head.b.value << 0.5, -0.5, 1.5;
  Graph g;
  Mat rep = Mat::Zero(2, 4);
  rep(1, 2) = 1.0;  // one-hot basis vector e_2
  Var logits = classify(g, g.input(rep), head);
  for (int c = 0; c < 3; ++c) {
    CHECK(logits.value()(0, c) == doctest::Approx(head.b.value(0, c)));
  }
  std::mt19937_64 rng(14);
  head.w.value = testutil::rand_mat(4, 3, rng);
  Var logits2 = classify(g, g.input(rep), head);
  for (int c = 0; c < 3; ++c) {
    CHECK(logits2.value()(1, c) ==
          doctest::Approx(head.w.value(2, c) + head.b.value(0, c)));
  }
}

TEST_CASE("classifier gradient wrt input matches finite differences") {
  std::mt19937_64 rng(15);
  ClassifierHead head(4, 5, 41);
  Mat rep = testutil::rand_mat(3, 4, rng);
  Mat w = testutil::rand_mat(3, 5, rng);
  double err = testutil::fd_max_err(
      [&](Graph& g, std::vector<Var>& v) {
        return g.sum_all(g.cmul_const(classify(g, v[0], head), w));
      },
      {rep});
  CHECK(err < 1e-4);
}

TEST_CASE("pair pipeline is differentiable end to end") {
  // gradients of a scalar loss through classify(axial(build_pair_matrix))
  // reach the upstream pair features
  std::mt19937_64 rng(16);
  int d = 8, n = 3;
  BilinearParams bp(d, 2, 50);
  AxialParams ax(d, 51);
  ClassifierHead head(d, 4, 52);
  int pc = n * (n - 1);
  Mat zs = testutil::rand_mat(pc, d, rng), zo = testutil::rand_mat(pc, d, rng);
  Mat w = testutil::rand_mat(n * n, 4, rng);
  double err = testutil::fd_max_err(
      [&](Graph& g, std::vector<Var>& v) {
        PairMatrix pm = build_pair_matrix(g, v[0], v[1], n, bp);
        Var rep = axial_attention(g, pm, ax);
        return g.sum_all(g.cmul_const(classify(g, rep, head), w));
      },
      {zs, zo});
  CHECK(err < 1e-3);
}

TEST_SUITE_END();
