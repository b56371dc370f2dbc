#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Each op records its output value and a closure that pushes the
// output gradient back into its inputs; Tape::backward replays the closures
// in reverse creation order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "probid/core_types.hpp"

namespace probid::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public Error {
 public:
  using Error::Error;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool recording = true) : recording_(recording) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Leaf that receives a gradient.
  Var variable(Matrix value) { return push(std::move(value), recording_, nullptr); }

  /// Leaf aliasing an external matrix that must outlive the tape. `slot`
  /// identifies the parameter when gradients are collected.
  Var parameter(const Matrix& external, std::size_t slot) {
    Var v = push(Matrix{}, recording_, nullptr);
    nodes_[v.id].external = &external;
    nodes_[v.id].slot = static_cast<std::ptrdiff_t>(slot);
    return v;
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds g into the gradient of node `id` (no-op for constants).
  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Records an op output. `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs_grad = false;
    if (recording_) {
      for (Var in : inputs) needs_grad = needs_grad || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }
  Var record(Matrix value, std::span<const Var> inputs, Backward backward) {
    bool needs_grad = false;
    if (recording_) {
      for (Var in : inputs) needs_grad = needs_grad || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  /// Reverse sweep from a 1x1 root.
  void backward(Var root) {
    if (value(root.id).size() != 1) throw ShapeError("backward root must be a scalar");
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  /// Calls fn(slot, grad) for every parameter leaf that received a gradient.
  template <class Fn>
  void for_each_parameter_grad(Fn&& fn) const {
    for (const Node& n : nodes_) {
      if (n.slot >= 0 && n.grad.size() != 0) fn(static_cast<std::size_t>(n.slot), n.grad);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    const Matrix* external = nullptr;
    std::ptrdiff_t slot = -1;
  };

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backward), nullptr, -1});
    return Var{this, nodes_.size() - 1};
  }

  bool recording_;
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    if (tp.needs(a.id)) tp.accumulate(a.id, g * tp.value(b.id).transpose());
    if (tp.needs(b.id)) tp.accumulate(b.id, tp.value(a.id).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, -g);
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    if (tp.needs(a.id)) tp.accumulate(a.id, g.cwiseProduct(tp.value(b.id)));
    if (tp.needs(b.id)) tp.accumulate(b.id, g.cwiseProduct(tp.value(a.id)));
  });
}

inline Var div(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "div");
  Matrix out = a.value().cwiseQuotient(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    const Matrix& bv = tp.value(b.id);
    if (tp.needs(a.id)) tp.accumulate(a.id, g.cwiseQuotient(bv));
    if (tp.needs(b.id)) {
      const Matrix& av = tp.value(a.id);
      tp.accumulate(b.id, -(g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv))));
    }
  });
}

/// Adds a 1 x m row to every row of an n x m matrix.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1 x cols");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    tp.accumulate(a.id, g);
    if (tp.needs(row.id)) tp.accumulate(row.id, g.colwise().sum());
  });
}

/// x W + b for x (n x in), W (in x out), b (1 x out).
inline Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

inline Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad(Var{&tp, self}) * s);
  });
}

inline Var add_scalar(Var a, double s) {
  Matrix out = a.value().array() + s;
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad(Var{&tp, self}));
  });
}

/// Elementwise product with a constant matrix.
inline Var mul_const(Var a, const Matrix& c) {
  detail::require_same_shape(a.value(), c, "mul_const");
  Matrix out = a.value().cwiseProduct(c);
  return a.tape->record(std::move(out), {a}, [a, c](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad(Var{&tp, self}).cwiseProduct(c));
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Var square(Var a) {
  Matrix out = a.value().array().square();
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, 2.0 * tp.grad(Var{&tp, self}).cwiseProduct(tp.value(a.id)));
  });
}

inline Var exp(Var a) {
  Matrix out = a.value().array().exp();
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad(Var{&tp, self}).cwiseProduct(tp.value(self)));
  });
}

inline Var log(Var a) {
  Matrix out = a.value().array().log();
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad(Var{&tp, self}).cwiseQuotient(tp.value(a.id)));
  });
}

inline Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(a.id, tp.grad(Var{&tp, self}).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

namespace detail {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK = 0.044715;

/// tanh(c (x + k x^3)) through the vectorized exponential.
inline Matrix gelu_tanh(const Matrix& x) {
  const auto u = kGeluC * (x.array() + kGeluK * x.array().cube());
  return (1.0 - 2.0 / ((2.0 * u).exp() + 1.0)).matrix();
}
}  // namespace detail

/// Tanh-approximated GELU values without recording.
inline Matrix gelu_value(const Matrix& x) {
  return (0.5 * x.array() * (1.0 + detail::gelu_tanh(x).array())).matrix();
}

/// Tanh-approximated GELU.
inline Var gelu(Var a) {
  return a.tape->record(gelu_value(a.value()), {a}, [a](Tape& tp, std::size_t self) {
    using detail::kGeluC;
    using detail::kGeluK;
    const Matrix& x = tp.value(a.id);
    const Matrix th = detail::gelu_tanh(x);
    const auto xa = x.array();
    const auto ta = th.array();
    const Matrix d = (0.5 * (1.0 + ta) + 0.5 * xa * (1.0 - ta.square()) * kGeluC * (1.0 + 3.0 * kGeluK * xa.square())).matrix();
    tp.accumulate(a.id, tp.grad(Var{&tp, self}).cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->record(std::move(out), {a}, [a, r, c](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, Matrix::Constant(r, c, tp.grad(Var{&tp, self})(0, 0)));
  });
}

inline Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Weighted sum of 1x1 terms.
inline Var combine(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.size() != coeffs.size() || terms.empty()) throw ShapeError("combine: size mismatch");
  Matrix out = Matrix::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) out(0, 0) += coeffs[i] * terms[i].scalar();
  std::vector<double> c(coeffs.begin(), coeffs.end());
  std::vector<Var> ts(terms.begin(), terms.end());
  return terms[0].tape->record(std::move(out), terms, [ts, c](Tape& tp, std::size_t self) {
    const double g = tp.grad(Var{&tp, self})(0, 0);
    for (std::size_t i = 0; i < ts.size(); ++i) tp.accumulate(ts[i].id, Matrix::Constant(1, 1, g * c[i]));
  });
}

inline Var column(Var a, Eigen::Index j) {
  Matrix out = a.value().col(j);
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->record(std::move(out), {a}, [a, j, r, c](Tape& tp, std::size_t self) {
    Matrix g = Matrix::Zero(r, c);
    g.col(j) = tp.grad(Var{&tp, self});
    tp.accumulate(a.id, g);
  });
}

/// Repeats an n x 1 column k times: n x k.
inline Var broadcast_cols(Var a, Eigen::Index k) {
  if (a.cols() != 1) throw ShapeError("broadcast_cols expects a column");
  Matrix out = a.value().replicate(1, k);
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.grad(Var{&tp, self}).rowwise().sum());
  });
}

/// Rows offset, offset + stride, ... (count rows).
inline Var select_rows(Var a, Eigen::Index offset, Eigen::Index stride, Eigen::Index count) {
  if (offset + (count - 1) * stride >= a.rows()) throw ShapeError("select_rows out of range");
  Matrix out(count, a.cols());
  for (Eigen::Index i = 0; i < count; ++i) out.row(i) = a.value().row(offset + i * stride);
  const Eigen::Index r = a.rows();
  return a.tape->record(std::move(out), {a}, [a, offset, stride, count, r](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    Matrix ga = Matrix::Zero(r, g.cols());
    for (Eigen::Index i = 0; i < count; ++i) ga.row(offset + i * stride) = g.row(i);
    tp.accumulate(a.id, ga);
  });
}

/// out.row(i) = table.row(indices[i]).
inline Var gather_rows(Var table, std::vector<Eigen::Index> indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows()) throw ShapeError("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(indices[i]);
  }
  const Eigen::Index r = table.rows();
  return table.tape->record(std::move(out), {table}, [table, indices = std::move(indices), r](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    Matrix gt = Matrix::Zero(r, g.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) gt.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table.id, gt);
  });
}

/// Interleaves equally shaped n x d parts: row p*k + j of the result is row p
/// of parts[j].
inline Var interleave_rows(std::span<const Var> parts) {
  const std::size_t k = parts.size();
  if (k == 0) throw ShapeError("interleave_rows needs at least one part");
  const Eigen::Index n = parts[0].rows(), d = parts[0].cols();
  for (const Var& p : parts) detail::require_same_shape(p.value(), parts[0].value(), "interleave_rows");
  Matrix out(n * static_cast<Eigen::Index>(k), d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.row(i * static_cast<Eigen::Index>(k) + static_cast<Eigen::Index>(j)) = parts[j].value().row(i);
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [ps, n, d](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    const auto k = static_cast<Eigen::Index>(ps.size());
    for (Eigen::Index j = 0; j < k; ++j) {
      if (!tp.needs(ps[static_cast<std::size_t>(j)].id)) continue;
      Matrix gp(n, d);
      for (Eigen::Index i = 0; i < n; ++i) gp.row(i) = g.row(i * k + j);
      tp.accumulate(ps[static_cast<std::size_t>(j)].id, gp);
    }
  });
}

// ---------------------------------------------------------------------------
// Transformer building blocks

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization with gain and bias rows (1 x d).
inline Var layer_norm(Var x, Var gain, Var bias) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  if (gain.cols() != d || bias.cols() != d) throw ShapeError("layer_norm: gain/bias width mismatch");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return x.tape->record(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    if (tp.needs(gain.id)) tp.accumulate(gain.id, g.cwiseProduct(xhat).colwise().sum());
    if (tp.needs(bias.id)) tp.accumulate(bias.id, g.colwise().sum());
    if (tp.needs(x.id)) {
      const Matrix dxhat = g.array().rowwise() * tp.value(gain.id).row(0).array();
      Matrix dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
      tp.accumulate(x.id, dx);
    }
  });
}

/// Multi-head causal self-attention on projected q, k, v (n x d each); row i
/// attends to rows 0..i. Returns the concatenated head outputs (n x d).
inline Var causal_attention(Var q, Var k, Var v, int heads) {
  const Eigen::Index n = q.rows(), d = q.cols();
  detail::require_same_shape(q.value(), k.value(), "causal_attention");
  detail::require_same_shape(q.value(), v.value(), "causal_attention");
  if (heads < 1 || d % heads != 0) throw ShapeError("causal_attention: width not divisible by heads");
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(n, d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    const auto vh = v.value().middleCols(h * dh, dh);
    Matrix s = (qh * kh.transpose()) * inv_sqrt;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto row = s.row(i).head(i + 1).array();
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
      s.row(i).tail(n - i - 1).setZero();
    }
    out.middleCols(h * dh, dh).noalias() = s * vh;
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return q.tape->record(std::move(out), {q, k, v},
                        [q, k, v, heads, dh, inv_sqrt, probs = std::move(probs)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    const Matrix& qv = tp.value(q.id);
    const Matrix& kv = tp.value(k.id);
    const Matrix& vv = tp.value(v.id);
    const Eigen::Index n = qv.rows();
    Matrix gq = Matrix::Zero(n, qv.cols());
    Matrix gk = Matrix::Zero(n, qv.cols());
    Matrix gv = Matrix::Zero(n, qv.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = probs[static_cast<std::size_t>(h)];
      const auto gh = g.middleCols(h * dh, dh);
      gv.middleCols(h * dh, dh).noalias() = p.transpose() * gh;
      Matrix dp = gh * vv.middleCols(h * dh, dh).transpose();
      // Softmax backward: ds = p * (dp - rowsum(dp * p)); masked entries have p = 0.
      const Eigen::VectorXd inner = dp.cwiseProduct(p).rowwise().sum();
      Matrix ds = p.cwiseProduct((dp.colwise() - inner));
      ds *= inv_sqrt;
      gq.middleCols(h * dh, dh).noalias() = ds * kv.middleCols(h * dh, dh);
      gk.middleCols(h * dh, dh).noalias() = ds.transpose() * qv.middleCols(h * dh, dh);
    }
    tp.accumulate(q.id, gq);
    tp.accumulate(k.id, gk);
    tp.accumulate(v.id, gv);
  });
}

}  // namespace probid::ad
