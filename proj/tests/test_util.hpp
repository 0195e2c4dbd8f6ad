#pragma once

// Shared helpers for the unit tests: reproducible random matrices and
// central-difference gradient checks against the tape.

#include "docre/autograd.hpp"

#include <functional>
#include <random>
#include <vector>

namespace testutil {

using docre::ag::Graph;
using docre::ag::Mat;
using docre::ag::Tensor;
using docre::ag::Var;

inline Mat rand_mat(int rows, int cols, std::mt19937_64& rng, double lo = -1.0,
                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

// Central differences on leaf inputs. `build` must be a pure function of the
// supplied matrices and return a 1x1 loss. Returns the worst
// |analytic - numeric| / (1 + |analytic| + |numeric|) over all entries.
inline double fd_max_err(
    const std::function<Var(Graph&, std::vector<Var>&)>& build,
    std::vector<Mat> inputs, double eps = 1e-5) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Mat& m : inputs) vars.push_back(g.input(m));
  Var loss = build(g, vars);
  g.backward(loss);
  std::vector<Mat> grads;
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(v.grad());

  auto eval = [&](const std::vector<Mat>& xs) {
    Graph g2;
    std::vector<Var> vs;
    vs.reserve(xs.size());
    for (const Mat& m : xs) vs.push_back(g2.input(m));
    return build(g2, vs).scalar();
  };

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        double save = inputs[i](r, c);
        inputs[i](r, c) = save + eps;
        double fp = eval(inputs);
        inputs[i](r, c) = save - eps;
        double fm = eval(inputs);
        inputs[i](r, c) = save;
        double numeric = (fp - fm) / (2.0 * eps);
        double analytic = grads[i](r, c);
        double err = std::abs(analytic - numeric) /
                     (1.0 + std::abs(analytic) + std::abs(numeric));
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

// Central differences on trainable tensors. `build` reconstructs the forward
// pass from the current tensor values each call and returns a 1x1 loss.
inline double fd_max_err_params(const std::function<Var(Graph&)>& build,
                                const std::vector<Tensor*>& params,
                                double eps = 1e-5) {
  for (Tensor* t : params) t->zero_grad();
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  std::vector<Mat> grads;
  grads.reserve(params.size());
  for (Tensor* t : params) grads.push_back(t->grad);

  auto eval = [&]() {
    Graph g;
    return build(g).scalar();
  };

  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    Mat& val = params[i]->value;
    for (Eigen::Index r = 0; r < val.rows(); ++r) {
      for (Eigen::Index c = 0; c < val.cols(); ++c) {
        double save = val(r, c);
        val(r, c) = save + eps;
        double fp = eval();
        val(r, c) = save - eps;
        double fm = eval();
        val(r, c) = save;
        double numeric = (fp - fm) / (2.0 * eps);
        double analytic = grads[i](r, c);
        double err = std::abs(analytic - numeric) /
                     (1.0 + std::abs(analytic) + std::abs(numeric));
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace testutil
