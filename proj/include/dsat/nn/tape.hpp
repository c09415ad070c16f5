#pragma once

// Reverse-mode differentiation over a recorded tape of matrix ops.
//
// Every op appends a node holding its forward value and a closure that maps
// the node's output gradient onto its parents. Nodes are appended in
// evaluation order, so a reverse sweep is a valid topological order.

#include <cmath>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsat/core_types.hpp"

namespace dsat::nn {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v) { return push(std::move(v), false, {}); }

  /// Differentiable leaf bound to external storage; repeated calls with the
  /// same source return the same node.
  Var leaf(const Mat* source) {
    if (auto it = leaves_.find(source); it != leaves_.end()) return {this, it->second};
    Var v = push(*source, true, {});
    leaves_.emplace(source, v.id);
    return v;
  }

  /// Records an op result. `backward` runs only if some parent requires grad.
  Var record(Mat value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  Var record(Mat value, std::span<const Var> parents, Backward backward) {
    bool rg = false;
    for (const Var& p : parents) rg = rg || nodes_[p.id].requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  void accumulate(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0 && n.value.size() != 0) {
      n.grad = g;
    } else if (n.value.size() != 0) {
      n.grad += g;
    }
  }

  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    if (!nodes_[id].requires_grad) return;
    accumulate(id, Mat(g));
  }

  void backward(Var loss) {
    if (loss.value().rows() != 1 || loss.value().cols() != 1)
      throw ShapeError("backward: loss must be a 1x1 scalar");
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Gradient that reached a leaf; zeros if the leaf is absent or unused.
  Mat grad_of(const Mat* source) const {
    auto it = leaves_.find(source);
    if (it == leaves_.end()) return Mat::Zero(source->rows(), source->cols());
    const Node& n = nodes_[it->second];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat{}, requires_grad, std::move(backward)});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Mat*, int> leaves_;
};

inline const Mat& Var::value() const { return tape->value(id); }

inline constexpr double kNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dims differ");
  Mat y = a.value() * b.value();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate_expr(a.id, g * b.value().transpose());
    t.accumulate_expr(b.id, a.value().transpose() * g);
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dims differ");
  Mat y = a.value() * b.value().transpose();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate_expr(a.id, g * b.value());
    t.accumulate_expr(b.id, g.transpose() * a.value());
  });
}

inline Var transpose(Var a) {
  Mat y = a.value().transpose();
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate_expr(a.id, g.transpose());
  });
}

inline Var add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add: shape mismatch");
  Mat y = a.value() + b.value();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sub: shape mismatch");
  Mat y = a.value() - b.value();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate_expr(b.id, -g);
  });
}

inline Var scale(Var a, double s) {
  Mat y = a.value() * s;
  return a.tape->record(std::move(y), {a}, [a, s](Tape& t, const Mat& g) {
    t.accumulate_expr(a.id, g * s);
  });
}

inline Var add_scalar(Var a, double s) {
  Mat y = a.value().array() + s;
  return a.tape->record(std::move(y), {a}, [a](Tape& t, const Mat& g) { t.accumulate(a.id, g); });
}

inline Var hadamard(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("hadamard: shape mismatch");
  Mat y = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate_expr(a.id, g.cwiseProduct(b.value()));
    t.accumulate_expr(b.id, g.cwiseProduct(a.value()));
  });
}

/// x + b broadcast over rows; b is 1 x cols.
inline Var add_row(Var x, Var b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw ShapeError("add_row: bias shape mismatch");
  Mat y = x.value();
  y.rowwise() += b.value().row(0);
  return x.tape->record(std::move(y), {x, b}, [x, b](Tape& t, const Mat& g) {
    t.accumulate(x.id, g);
    t.accumulate_expr(b.id, g.colwise().sum());
  });
}

/// x * s broadcast over rows; s is 1 x cols.
inline Var mul_row(Var x, Var s) {
  if (s.rows() != 1 || s.cols() != x.cols()) throw ShapeError("mul_row: scale shape mismatch");
  Mat y = x.value().array().rowwise() * s.value().row(0).array();
  return x.tape->record(std::move(y), {x, s}, [x, s](Tape& t, const Mat& g) {
    t.accumulate_expr(x.id, g.array().rowwise() * s.value().row(0).array());
    t.accumulate_expr(s.id, (g.cwiseProduct(x.value())).colwise().sum());
  });
}

/// x * w broadcast over columns; w is rows x 1.
inline Var mul_col(Var x, Var w) {
  if (w.cols() != 1 || w.rows() != x.rows()) throw ShapeError("mul_col: weight shape mismatch");
  Mat y = x.value().array().colwise() * w.value().col(0).array();
  return x.tape->record(std::move(y), {x, w}, [x, w](Tape& t, const Mat& g) {
    t.accumulate_expr(x.id, g.array().colwise() * w.value().col(0).array());
    t.accumulate_expr(w.id, (g.cwiseProduct(x.value())).rowwise().sum());
  });
}

/// x + c broadcast over columns; c is rows x 1.
inline Var add_col(Var x, Var c) {
  if (c.cols() != 1 || c.rows() != x.rows()) throw ShapeError("add_col: shape mismatch");
  Mat y = x.value();
  y.colwise() += c.value().col(0);
  return x.tape->record(std::move(y), {x, c}, [x, c](Tape& t, const Mat& g) {
    t.accumulate(x.id, g);
    t.accumulate_expr(c.id, g.rowwise().sum());
  });
}

/// y = x W^T (+ b). W is out x in, b is 1 x out.
inline Var linear(Var x, Var w, const Var* b = nullptr) {
  Var y = matmul_nt(x, w);
  return b ? add_row(y, *b) : y;
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var relu(Var x) {
  Mat y = x.value().cwiseMax(0.0);
  return x.tape->record(std::move(y), {x}, [x](Tape& t, const Mat& g) {
    t.accumulate_expr(x.id, (x.value().array() > 0.0).cast<double>() * g.array());
  });
}

inline double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

inline double gelu_grad_scalar(double v) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
}

/// Exact (erf-based) GELU.
inline Var gelu(Var x) {
  Mat y = x.value().unaryExpr([](double v) { return gelu_scalar(v); });
  return x.tape->record(std::move(y), {x}, [x](Tape& t, const Mat& g) {
    t.accumulate_expr(x.id, x.value().unaryExpr([](double v) { return gelu_grad_scalar(v); })
                                .cwiseProduct(g));
  });
}

inline double sigmoid_scalar(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Var sigmoid(Var x) {
  Mat y = x.value().unaryExpr([](double v) { return sigmoid_scalar(v); });
  Mat s = y;
  return x.tape->record(std::move(y), {x}, [x, s](Tape& t, const Mat& g) {
    t.accumulate_expr(x.id, (s.array() * (1.0 - s.array()) * g.array()).matrix());
  });
}

/// log(max(x, eps)); gradient is zero where the clamp is active.
inline Var log_clamped(Var x, double eps) {
  Mat y = x.value().unaryExpr([eps](double v) { return std::log(std::max(v, eps)); });
  return x.tape->record(std::move(y), {x}, [x, eps](Tape& t, const Mat& g) {
    Mat d = x.value().unaryExpr([eps](double v) { return v > eps ? 1.0 / v : 0.0; });
    t.accumulate_expr(x.id, d.cwiseProduct(g));
  });
}

/// sqrt(x + eps), smooth at zero.
inline Var sqrt_eps(Var x, double eps) {
  Mat y = (x.value().array() + eps).sqrt().matrix();
  Mat yc = y;
  return x.tape->record(std::move(y), {x}, [x, yc](Tape& t, const Mat& g) {
    t.accumulate_expr(x.id, (0.5 * g.array() / yc.array()).matrix());
  });
}

/// Row-wise log-softmax.
inline Var log_softmax(Var z) {
  Mat y(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.value().row(r).maxCoeff();
    const double lse = m + std::log((z.value().row(r).array() - m).exp().sum());
    y.row(r) = z.value().row(r).array() - lse;
  }
  Mat yc = y;
  return z.tape->record(std::move(y), {z}, [z, yc](Tape& t, const Mat& g) {
    Mat gz(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      gz.row(r) = g.row(r).array() - yc.row(r).array().exp() * g.row(r).sum();
    t.accumulate(z.id, gz);
  });
}

/// Per-row normalization to zero mean and unit variance, no affine terms.
inline Var layer_norm(Var x, double eps = kNormEps) {
  const Eigen::Index n = x.cols();
  Mat y(x.rows(), n);
  Vec inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (n == 0) continue;
    const auto row = x.value().row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    y.row(r) = (row.array() - mu) * inv_std(r);
  }
  Mat yc = y;
  return x.tape->record(std::move(y), {x}, [x, yc, inv_std, n](Tape& t, const Mat& g) {
    Mat gx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (n == 0) continue;
      const double mg = g.row(r).mean();
      const double mgy = g.row(r).cwiseProduct(yc.row(r)).mean();
      gx.row(r) = inv_std(r) * (g.row(r).array() - mg - yc.row(r).array() * mgy);
    }
    t.accumulate(x.id, gx);
  });
}

/// Appends a zero logit to every row, then takes the row-wise softmax.
/// T x D logits give a T x (D + 1) row-stochastic matrix; column D is no-match.
inline Var softmax_null(Var logits) {
  const Eigen::Index rows = logits.rows(), d = logits.cols();
  Mat p(rows, d + 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double m = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) m = std::max(m, logits.value()(r, c));
    double z = std::exp(-m);
    p(r, d) = z;
    for (Eigen::Index c = 0; c < d; ++c) {
      p(r, c) = std::exp(logits.value()(r, c) - m);
      z += p(r, c);
    }
    p.row(r) /= z;
  }
  Mat pc = p;
  return logits.tape->record(std::move(p), {logits}, [logits, pc, d](Tape& t, const Mat& g) {
    Mat gz(pc.rows(), d);
    for (Eigen::Index r = 0; r < pc.rows(); ++r) {
      const double dot = pc.row(r).dot(g.row(r));
      for (Eigen::Index c = 0; c < d; ++c) gz(r, c) = pc(r, c) * (g(r, c) - dot);
    }
    t.accumulate(logits.id, gz);
  });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || start + n > a.cols()) throw ShapeError("slice_cols: out of range");
  Mat y = a.value().middleCols(start, n);
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape->record(std::move(y), {a}, [a, start, n, rows, cols](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    full.middleCols(start, n) = g;
    t.accumulate(a.id, full);
  });
}

inline Var gather_rows(Var a, std::vector<int> idx) {
  Mat y(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(k) = a.value().row(idx[k]);
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape->record(std::move(y), {a}, [a, idx, rows, cols](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    for (std::size_t k = 0; k < idx.size(); ++k) full.row(idx[k]) += g.row(k);
    t.accumulate(a.id, full);
  });
}

inline Var concat_rows(const std::vector<Var>& parts, Eigen::Index cols) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Tape* tape = parts.front().tape;
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat y(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return tape->record(std::move(y), std::span<const Var>(parts), [parts](Tape& t, const Mat& g) {
    Eigen::Index r0 = 0;
    for (const Var& p : parts) {
      t.accumulate_expr(p.id, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts, Eigen::Index rows) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  Tape* tape = parts.front().tape;
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat y(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return tape->record(std::move(y), std::span<const Var>(parts), [parts](Tape& t, const Mat& g) {
    Eigen::Index c0 = 0;
    for (const Var& p : parts) {
      t.accumulate_expr(p.id, g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

/// Row-major reshape.
inline Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: size mismatch");
  Mat y = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return a.tape->record(std::move(y), {a}, [a, r0, c0](Tape& t, const Mat& g) {
    t.accumulate(a.id, Mat(Eigen::Map<const Mat>(g.data(), r0, c0)));
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Mat y(1, 1);
  y(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->record(std::move(y), {a}, [a, r, c](Tape& t, const Mat& g) {
    t.accumulate(a.id, Mat::Constant(r, c, g(0, 0)));
  });
}

inline Var mean(Var a) {
  const auto n = a.value().size();
  return n == 0 ? a.tape->constant(Mat::Zero(1, 1)) : scale(sum(a), 1.0 / static_cast<double>(n));
}

inline Var row_sum(Var a) {
  Mat y = a.value().rowwise().sum();
  const Eigen::Index c = a.cols();
  return a.tape->record(std::move(y), {a}, [a, c](Tape& t, const Mat& g) {
    Mat full(g.rows(), c);
    for (Eigen::Index r = 0; r < g.rows(); ++r) full.row(r).setConstant(g(r, 0));
    t.accumulate(a.id, full);
  });
}

/// Row-wise maximum, rows x 1. A row with no columns yields 0.
inline Var row_max(Var a) {
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Mat y = Mat::Zero(rows, 1);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(rows), -1);
  for (Eigen::Index r = 0; r < rows && cols > 0; ++r) y(r, 0) = a.value().row(r).maxCoeff(&arg[r]);
  return a.tape->record(std::move(y), {a}, [a, arg, rows, cols](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      if (arg[r] >= 0) full(r, arg[r]) = g(r, 0);
    t.accumulate(a.id, full);
  });
}

/// Elementwise product with a constant mask.
inline Var mask(Var a, const Mat& m) {
  if (m.rows() != a.rows() || m.cols() != a.cols()) throw ShapeError("mask: shape mismatch");
  Mat y = a.value().cwiseProduct(m);
  return a.tape->record(std::move(y), {a}, [a, m](Tape& t, const Mat& g) {
    t.accumulate_expr(a.id, g.cwiseProduct(m));
  });
}

/// sum(a .* w) for a constant weight matrix.
inline Var dot_const(Var a, const Mat& w) { return sum(mask(a, w)); }

}  // namespace dsat::nn
