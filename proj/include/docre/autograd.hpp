#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Graph is a per-example tape: ops evaluate eagerly and record a backward
// closure. backward(loss) walks the tape in reverse creation order, which is
// a valid topological order for a define-by-run graph. Parameters (Tensor)
// live outside the graph; param() splices them in and backward() accumulates
// into Tensor::grad, so one graph per document can be built, differentiated
// and discarded while the parameter store persists across steps.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace docre::ag {

using Mat = Eigen::MatrixXd;

class Graph;

// Handle into a Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

// A named trainable parameter: value plus persistent gradient accumulator.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;

  Tensor() = default;
  Tensor(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

class Graph {
 public:
  Graph() { nodes_.reserve(256); }

  // ---- leaves ----
  Var input(Mat v);                 // constant; gradient is computed but unused
  Var param(Tensor& t);             // backward() adds into t.grad

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double s);
  Var add_const(Var a, double s);
  Var add_rowvec(Var a, Var row);   // broadcast a 1xC row over every row of a
  Var cmul(Var a, Var b);           // elementwise
  Var cmul_const(Var a, Mat m);     // elementwise with a constant mask
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // ---- elementwise nonlinearities ----
  Var tanh(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softplus(Var a);              // log(1 + e^x), overflow-safe

  // ---- reductions / softmax ----
  Var softmax_rows(Var a);
  Var logsumexp_rows(Var a);                    // R x 1
  Var masked_logsumexp_rows(Var a, Mat mask);   // lse over entries with mask!=0
  Var logsumexp_cols(Var a);                    // 1 x C, lse down each column
  Var sum_all(Var a);                           // 1 x 1
  Var mean_all(Var a);
  Var row_sums(Var a);                          // R x 1
  Var col_sums(Var a);                          // 1 x C

  // ---- shape ops ----
  Var gather_rows(Var a, std::vector<int> idx);
  Var gather_cols(Var a, std::vector<int> idx);
  Var slice_rows(Var a, int start, int len);
  Var slice_cols(Var a, int start, int len);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var pad(Var a, int rows, int cols, int row_off, int col_off);

  // ---- specialized ----
  // Rows rescaled to sum to one. An exactly-zero row maps to the uniform
  // distribution and is treated as constant there (zero gradient).
  Var normalize_rows_sum1(Var a);
  // Per-row LayerNorm with learned gain/bias (both 1 x C vars).
  Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
  // Inverted dropout; the mask is drawn from rng only when enabled.
  Var dropout(Var a, double p, std::mt19937_64& rng, bool enabled);
  // Per-row grouped outer product: inputs P x D split into `groups` equal
  // blocks; output P x (D*D/groups), feature (j, r, c) at column
  // j*gs*gs + r*gs + c where gs = D/groups.
  Var grouped_outer(Var a, Var b, int groups);

  void backward(Var loss);          // loss must be 1x1

  size_t size() const { return nodes_.size(); }
  const Mat& value_of(int id) const { return nodes_[id].value; }
  const Mat& grad_of(int id) const { return nodes_[id].grad; }

 private:
  friend struct Var;
  using BackFn = std::function<void(Graph&, const Mat&)>;

  struct Node {
    Mat value;
    Mat grad;
    Tensor* tensor = nullptr;
    BackFn back;
  };

  std::vector<Node> nodes_;

  Var make(Mat v);
  void set_back(Var v, BackFn fn) { nodes_[v.id].back = std::move(fn); }
  Mat& g(int id) { return nodes_[id].grad; }
  const Mat& v(int id) const { return nodes_[id].value; }
  static void check_same_shape(const Var& a, const Var& b, const char* op);
};

// Numerically stable helpers shared by ops and oracles.
double stable_logsumexp(const Eigen::VectorXd& x);
double stable_softplus(double x);
double sigmoid(double x);

}  // namespace docre::ag
