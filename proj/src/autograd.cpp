#include "docre/autograd.hpp"

#include "docre/common.hpp"

#include <algorithm>
#include <cmath>

namespace docre::ag {

const Mat& Var::value() const { return graph->value_of(id); }
const Mat& Var::grad() const { return graph->grad_of(id); }

double stable_logsumexp(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw Error("logsumexp of empty vector");
  double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  double s = (x.array() - m).exp().sum();
  return m + std::log(s);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Var Graph::make(Mat v) {
  Node n;
  n.grad = Mat::Zero(v.rows(), v.cols());
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " +
                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
  }
}

Var Graph::input(Mat v) { return make(std::move(v)); }

Var Graph::param(Tensor& t) {
  Var out = make(t.value);
  nodes_[out.id].tensor = &t;
  return out;
}

Var Graph::add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Var out = make(v(a.id) + v(b.id));
  set_back(out, [ai = a.id, bi = b.id](Graph& g, const Mat& go) {
    g.g(ai) += go;
    g.g(bi) += go;
  });
  return out;
}

Var Graph::sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Var out = make(v(a.id) - v(b.id));
  set_back(out, [ai = a.id, bi = b.id](Graph& g, const Mat& go) {
    g.g(ai) += go;
    g.g(bi) -= go;
  });
  return out;
}

Var Graph::neg(Var a) {
  Var out = make(-v(a.id));
  set_back(out, [ai = a.id](Graph& g, const Mat& go) { g.g(ai) -= go; });
  return out;
}

Var Graph::scale(Var a, double s) {
  Var out = make(v(a.id) * s);
  set_back(out, [ai = a.id, s](Graph& g, const Mat& go) { g.g(ai) += s * go; });
  return out;
}

Var Graph::add_const(Var a, double s) {
  Var out = make(v(a.id).array() + s);
  set_back(out, [ai = a.id](Graph& g, const Mat& go) { g.g(ai) += go; });
  return out;
}

Var Graph::add_rowvec(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error("add_rowvec: need 1x" + std::to_string(a.cols()) + " row");
  }
  Mat y = v(a.id);
  y.rowwise() += v(row.id).row(0);
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, ri = row.id](Graph& g, const Mat& go) {
    g.g(ai) += go;
    g.g(ri).row(0) += go.colwise().sum();
  });
  return out;
}

Var Graph::cmul(Var a, Var b) {
  check_same_shape(a, b, "cmul");
  Var out = make(v(a.id).cwiseProduct(v(b.id)));
  set_back(out, [ai = a.id, bi = b.id](Graph& g, const Mat& go) {
    g.g(ai) += go.cwiseProduct(g.v(bi));
    g.g(bi) += go.cwiseProduct(g.v(ai));
  });
  return out;
}

Var Graph::cmul_const(Var a, Mat m) {
  if (m.rows() != a.rows() || m.cols() != a.cols()) {
    throw Error("cmul_const: mask shape mismatch");
  }
  Var out = make(v(a.id).cwiseProduct(m));
  set_back(out, [ai = a.id, m = std::move(m)](Graph& g, const Mat& go) {
    g.g(ai) += go.cwiseProduct(m);
  });
  return out;
}

Var Graph::matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()));
  }
  Var out = make(v(a.id) * v(b.id));
  set_back(out, [ai = a.id, bi = b.id](Graph& g, const Mat& go) {
    g.g(ai) += go * g.v(bi).transpose();
    g.g(bi) += g.v(ai).transpose() * go;
  });
  return out;
}

Var Graph::transpose(Var a) {
  Var out = make(v(a.id).transpose());
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai) += go.transpose();
  });
  return out;
}

Var Graph::tanh(Var a) {
  Var out = make(v(a.id).array().tanh());
  set_back(out, [ai = a.id, oi = out.id](Graph& g, const Mat& go) {
    const Mat& y = g.v(oi);
    g.g(ai).array() += go.array() * (1.0 - y.array().square());
  });
  return out;
}

Var Graph::relu(Var a) {
  Var out = make(v(a.id).cwiseMax(0.0));
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai).array() +=
        go.array() * (g.v(ai).array() > 0.0).cast<double>();
  });
  return out;
}

Var Graph::exp(Var a) {
  Var out = make(v(a.id).array().exp());
  set_back(out, [ai = a.id, oi = out.id](Graph& g, const Mat& go) {
    g.g(ai).array() += go.array() * g.v(oi).array();
  });
  return out;
}

Var Graph::log(Var a) {
  Var out = make(v(a.id).array().log());
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai).array() += go.array() / g.v(ai).array();
  });
  return out;
}

Var Graph::softplus(Var a) {
  Mat y = v(a.id).unaryExpr([](double x) { return stable_softplus(x); });
  Var out = make(std::move(y));
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai).array() +=
        go.array() * g.v(ai).unaryExpr([](double x) { return sigmoid(x); }).array();
  });
  return out;
}

Var Graph::softmax_rows(Var a) {
  Mat y(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double m = v(a.id).row(r).maxCoeff();
    Eigen::ArrayXd e = (v(a.id).row(r).array() - m).exp();
    y.row(r) = e / e.sum();
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, oi = out.id](Graph& g, const Mat& go) {
    const Mat& y = g.v(oi);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = go.row(r).dot(y.row(r));
      g.g(ai).row(r).array() +=
          y.row(r).array() * (go.row(r).array() - dot);
    }
  });
  return out;
}

Var Graph::logsumexp_rows(Var a) {
  Mat y(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    y(r, 0) = stable_logsumexp(v(a.id).row(r).transpose());
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, oi = out.id](Graph& g, const Mat& go) {
    for (Eigen::Index r = 0; r < go.rows(); ++r) {
      // d lse / d a_k = exp(a_k - lse)
      g.g(ai).row(r).array() +=
          go(r, 0) * (g.v(ai).row(r).array() - g.v(oi)(r, 0)).exp();
    }
  });
  return out;
}

Var Graph::masked_logsumexp_rows(Var a, Mat mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw Error("masked_logsumexp_rows: mask shape mismatch");
  }
  Mat y = Mat::Zero(a.rows(), 1);
  std::vector<char> empty(static_cast<size_t>(a.rows()), 0);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (mask(r, c) != 0.0) m = std::max(m, v(a.id)(r, c));
    }
    if (!std::isfinite(m)) {
      empty[static_cast<size_t>(r)] = 1;  // no active entries; define lse = 0
      continue;
    }
    double s = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (mask(r, c) != 0.0) s += std::exp(v(a.id)(r, c) - m);
    }
    y(r, 0) = m + std::log(s);
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, oi = out.id, mask = std::move(mask),
                 empty = std::move(empty)](Graph& g, const Mat& go) {
    for (Eigen::Index r = 0; r < go.rows(); ++r) {
      if (empty[static_cast<size_t>(r)]) continue;
      for (Eigen::Index c = 0; c < mask.cols(); ++c) {
        if (mask(r, c) != 0.0) {
          g.g(ai)(r, c) +=
              go(r, 0) * std::exp(g.v(ai)(r, c) - g.v(oi)(r, 0));
        }
      }
    }
  });
  return out;
}

Var Graph::logsumexp_cols(Var a) {
  Mat y(1, a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    y(0, c) = stable_logsumexp(v(a.id).col(c));
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, oi = out.id](Graph& g, const Mat& go) {
    for (Eigen::Index c = 0; c < go.cols(); ++c) {
      g.g(ai).col(c).array() +=
          go(0, c) * (g.v(ai).col(c).array() - g.v(oi)(0, c)).exp();
    }
  });
  return out;
}

Var Graph::sum_all(Var a) {
  Mat y(1, 1);
  y(0, 0) = v(a.id).sum();
  Var out = make(std::move(y));
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai).array() += go(0, 0);
  });
  return out;
}

Var Graph::mean_all(Var a) {
  double n = static_cast<double>(a.rows() * a.cols());
  Mat y(1, 1);
  y(0, 0) = v(a.id).sum() / n;
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, n](Graph& g, const Mat& go) {
    g.g(ai).array() += go(0, 0) / n;
  });
  return out;
}

Var Graph::row_sums(Var a) {
  Var out = make(v(a.id).rowwise().sum());
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai).colwise() += go.col(0);
  });
  return out;
}

Var Graph::col_sums(Var a) {
  Var out = make(v(a.id).colwise().sum());
  set_back(out, [ai = a.id](Graph& g, const Mat& go) {
    g.g(ai).rowwise() += go.row(0);
  });
  return out;
}

Var Graph::gather_rows(Var a, std::vector<int> idx) {
  Mat y(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) {
      throw Error("gather_rows: index " + std::to_string(idx[i]) +
                  " out of range");
    }
    y.row(static_cast<Eigen::Index>(i)) = v(a.id).row(idx[i]);
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, idx = std::move(idx)](Graph& g, const Mat& go) {
    for (size_t i = 0; i < idx.size(); ++i) {
      g.g(ai).row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
    }
  });
  return out;
}

Var Graph::gather_cols(Var a, std::vector<int> idx) {
  Mat y(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.cols()) {
      throw Error("gather_cols: index " + std::to_string(idx[i]) +
                  " out of range");
    }
    y.col(static_cast<Eigen::Index>(i)) = v(a.id).col(idx[i]);
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, idx = std::move(idx)](Graph& g, const Mat& go) {
    for (size_t i = 0; i < idx.size(); ++i) {
      g.g(ai).col(idx[i]) += go.col(static_cast<Eigen::Index>(i));
    }
  });
  return out;
}

Var Graph::slice_rows(Var a, int start, int len) {
  if (start < 0 || len < 0 || start + len > a.rows()) {
    throw Error("slice_rows: out of range");
  }
  Var out = make(v(a.id).middleRows(start, len));
  set_back(out, [ai = a.id, start, len](Graph& g, const Mat& go) {
    g.g(ai).middleRows(start, len) += go;
  });
  return out;
}

Var Graph::slice_cols(Var a, int start, int len) {
  if (start < 0 || len < 0 || start + len > a.cols()) {
    throw Error("slice_cols: out of range");
  }
  Var out = make(v(a.id).middleCols(start, len));
  set_back(out, [ai = a.id, start, len](Graph& g, const Mat& go) {
    g.g(ai).middleCols(start, len) += go;
  });
  return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: no parts");
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != parts[0].cols()) throw Error("concat_rows: col mismatch");
    total += p.rows();
  }
  Mat y(total, parts[0].cols());
  std::vector<std::pair<int, int>> spans;  // (id, row offset)
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    y.middleRows(off, p.rows()) = v(p.id);
    spans.emplace_back(p.id, static_cast<int>(off));
    off += p.rows();
  }
  Var out = make(std::move(y));
  set_back(out, [spans = std::move(spans)](Graph& g, const Mat& go) {
    for (auto [id, o] : spans) {
      g.g(id) += go.middleRows(o, g.g(id).rows());
    }
  });
  return out;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no parts");
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != parts[0].rows()) throw Error("concat_cols: row mismatch");
    total += p.cols();
  }
  Mat y(parts[0].rows(), total);
  std::vector<std::pair<int, int>> spans;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    y.middleCols(off, p.cols()) = v(p.id);
    spans.emplace_back(p.id, static_cast<int>(off));
    off += p.cols();
  }
  Var out = make(std::move(y));
  set_back(out, [spans = std::move(spans)](Graph& g, const Mat& go) {
    for (auto [id, o] : spans) {
      g.g(id) += go.middleCols(o, g.g(id).cols());
    }
  });
  return out;
}

Var Graph::pad(Var a, int rows, int cols, int row_off, int col_off) {
  if (row_off < 0 || col_off < 0 || row_off + a.rows() > rows ||
      col_off + a.cols() > cols) {
    throw Error("pad: block out of range");
  }
  Mat y = Mat::Zero(rows, cols);
  y.block(row_off, col_off, a.rows(), a.cols()) = v(a.id);
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, row_off, col_off](Graph& g, const Mat& go) {
    g.g(ai) += go.block(row_off, col_off, g.g(ai).rows(), g.g(ai).cols());
  });
  return out;
}

Var Graph::normalize_rows_sum1(Var a) {
  Mat y(a.rows(), a.cols());
  Eigen::VectorXd sums(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double s = v(a.id).row(r).sum();
    sums(r) = s;
    if (s == 0.0) {
      y.row(r).setConstant(1.0 / static_cast<double>(a.cols()));
    } else {
      y.row(r) = v(a.id).row(r) / s;
    }
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, oi = out.id, sums = std::move(sums)](
                    Graph& g, const Mat& go) {
    const Mat& y = g.v(oi);
    for (Eigen::Index r = 0; r < go.rows(); ++r) {
      if (sums(r) == 0.0) continue;  // uniform fallback is constant
      double dot = go.row(r).dot(y.row(r));
      g.g(ai).row(r).array() += (go.row(r).array() - dot) / sums(r);
    }
  });
  return out;
}

Var Graph::layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  if (gain.rows() != 1 || gain.cols() != a.cols() || bias.rows() != 1 ||
      bias.cols() != a.cols()) {
    throw Error("layer_norm_rows: gain/bias must be 1x" +
                std::to_string(a.cols()));
  }
  Eigen::Index R = a.rows(), C = a.cols();
  Mat xhat(R, C);
  Eigen::VectorXd inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double mu = v(a.id).row(r).mean();
    double var = (v(a.id).row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (v(a.id).row(r).array() - mu) * is;
  }
  Mat y(R, C);
  for (Eigen::Index r = 0; r < R; ++r) {
    y.row(r) = xhat.row(r).cwiseProduct(v(gain.id).row(0)) + v(bias.id).row(0);
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, gi = gain.id, bi = bias.id,
                 xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Graph& g, const Mat& go) {
    for (Eigen::Index r = 0; r < go.rows(); ++r) {
      Eigen::RowVectorXd dxhat = go.row(r).cwiseProduct(g.v(gi).row(0));
      double m1 = dxhat.mean();
      double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      g.g(ai).row(r).array() +=
          inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
    }
    g.g(gi).row(0) += (go.cwiseProduct(xhat)).colwise().sum();
    g.g(bi).row(0) += go.colwise().sum();
  });
  return out;
}

Var Graph::dropout(Var a, double p, std::mt19937_64& rng, bool enabled) {
  if (!enabled || p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout: p must be < 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat mask(a.rows(), a.cols());
  double keep = 1.0 - p;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      mask(r, c) = (u(rng) < keep) ? 1.0 / keep : 0.0;
    }
  }
  return cmul_const(a, std::move(mask));
}

Var Graph::grouped_outer(Var a, Var b, int groups) {
  check_same_shape(a, b, "grouped_outer");
  Eigen::Index P = a.rows(), D = a.cols();
  if (groups <= 0 || D % groups != 0) {
    throw Error("grouped_outer: groups must divide feature dim");
  }
  Eigen::Index gs = D / groups;
  Mat y(P, groups * gs * gs);
  for (Eigen::Index p = 0; p < P; ++p) {
    for (int j = 0; j < groups; ++j) {
      for (Eigen::Index r = 0; r < gs; ++r) {
        for (Eigen::Index c = 0; c < gs; ++c) {
          y(p, j * gs * gs + r * gs + c) =
              v(a.id)(p, j * gs + r) * v(b.id)(p, j * gs + c);
        }
      }
    }
  }
  Var out = make(std::move(y));
  set_back(out, [ai = a.id, bi = b.id, groups, gs](Graph& g, const Mat& go) {
    for (Eigen::Index p = 0; p < go.rows(); ++p) {
      for (int j = 0; j < groups; ++j) {
        for (Eigen::Index r = 0; r < gs; ++r) {
          for (Eigen::Index c = 0; c < gs; ++c) {
            double gv = go(p, j * gs * gs + r * gs + c);
            g.g(ai)(p, j * gs + r) += gv * g.v(bi)(p, j * gs + c);
            g.g(bi)(p, j * gs + c) += gv * g.v(ai)(p, j * gs + r);
          }
        }
      }
    }
  });
  return out;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("backward: var from another graph");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error("backward: loss must be 1x1, got " +
                std::to_string(loss.rows()) + "x" +
                std::to_string(loss.cols()));
  }
  for (auto& n : nodes_) n.grad.setZero();
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
  }
  for (int i = 0; i <= loss.id; ++i) {
    if (nodes_[i].tensor != nullptr) {
      nodes_[i].tensor->grad += nodes_[i].grad;
    }
  }
}

}  // namespace docre::ag
