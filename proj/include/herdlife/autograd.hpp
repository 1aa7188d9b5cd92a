#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every operation of one forward pass in execution order, so
// the record is already topologically sorted. backward() walks it once in
// reverse. A tape is single-use: build a new one for every forward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "herdlife/error.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/tensor.hpp"

namespace herdlife::ag {

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string parameter_name, Tensor initial)
      : name(std::move(parameter_name)), value(std::move(initial)), grad(Tensor::zeros_like(value)) {
    value.set_requires_grad(true);
  }

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  /// With grad_enabled false every node is a constant: nothing is kept for backward().
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value) {
    value.set_requires_grad(false);
    return push(std::move(value), {}, nullptr, nullptr, false, "constant");
  }

  /// Differentiable leaf; read its gradient with grad() after backward().
  Var input(Tensor value) {
    value.set_requires_grad(grad_enabled_);
    return push(std::move(value), {}, nullptr, nullptr, grad_enabled_, "input");
  }

  /// Leaf bound to a Parameter; backward() adds into parameter.grad.
  Var parameter(Parameter& parameter) {
    if (!grad_enabled_) return push(parameter.value, {}, nullptr, nullptr, false, parameter.name.c_str());
    return push(parameter.value, {}, nullptr, &parameter, true, parameter.name.c_str());
  }

  /// Records an operation result. `backward` may be empty when no parent needs a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, const char* op) {
    bool needs_grad = false;
    for (std::size_t p : parents) needs_grad = needs_grad || nodes_.at(p).requires_grad;
    if (!needs_grad) backward = nullptr;
    return push(std::move(value), std::move(parents), std::move(backward), nullptr, needs_grad, op);
  }

  /// Reverse sweep from a scalar loss. Seeds d(loss)=1 and visits each node once.
  void backward(const Var& loss) {
    if (consumed_) throw UsageError("backward() already ran on this tape; record a new forward pass");
    if (&loss.tape() != this) throw UsageError("loss does not belong to this tape");
    const Tensor& lv = value(loss.id());
    if (lv.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_string(lv.shape()));
    consumed_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.requires_grad || node.grad.empty()) continue;
      if (node.backward) node.backward(*this, id);
      if (node.parameter != nullptr) node.parameter->grad += node.grad;
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of the last backward() loss with respect to `v` (zeros if unreached).
  Tensor grad(const Var& v) const {
    const Node& node = nodes_.at(v.id());
    return node.grad.empty() ? Tensor::zeros_like(node.value) : node.grad;
  }

  /// Mutable gradient accumulator for node `id`, allocated on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& node = nodes_.at(id);
    if (node.grad.empty()) node.grad = Tensor::zeros_like(node.value);
    return node.grad;
  }

  const Tensor& grad_of(std::size_t id) const { return nodes_.at(id).grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* parameter = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, Parameter* parameter,
           bool requires_grad, const char* op) {
    if (consumed_) throw UsageError("tape already consumed by backward()");
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(parents), std::move(backward), parameter,
                          requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool consumed_ = false;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands recorded on different tapes");
}

// Adds g into the gradient of `id` when that node wants one.
inline void accumulate(Tape& tape, std::size_t id, const Tensor& g) {
  if (!tape.requires_grad(id)) return;
  Tensor& dst = tape.grad_buffer(id);
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

/// a + b. `b` may match `a` exactly or match a trailing suffix of `a`'s shape (broadcast over leading axes).
inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!detail::is_suffix(bv.shape(), av.shape())) {
    throw ShapeError("add: " + shape_string(bv.shape()) + " does not broadcast to " + shape_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t inner = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % inner];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib, inner](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           detail::accumulate(t, ia, g);
                           if (t.requires_grad(ib)) {
                             Tensor& gb = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < g.numel(); ++i) gb[i % inner] += g[i];
                           }
                         },
                         "add");
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           detail::accumulate(t, ia, g);
                           if (t.requires_grad(ib)) {
                             Tensor& gb = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                           }
                         },
                         "sub");
}

/// Elementwise product of equal shapes.
inline Var mul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& av = t.value(ia);
                           const Tensor& bv = t.value(ib);
                           if (t.requires_grad(ia)) {
                             Tensor& ga = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& gb = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
                           }
                         },
                         "mul");
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, factor](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += factor * g[i];
                         },
                         "scale");
}

inline Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(total), {ia},
                         [ia](Tape& t, std::size_t self) {
                           const double g = t.grad_of(self)[0];
                           Tensor& ga = t.grad_buffer(ia);
                           for (double& v : ga.values()) v += g;
                         },
                         "sum");
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                         },
                         "reshape");
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Swaps the last two axes.
inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  const std::size_t rows = av.dim(av.rank() - 2), cols = av.dim(av.rank() - 1);
  const std::size_t batch = av.numel() / (rows * cols);
  Shape shape = av.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = av.data() + b * rows * cols;
    double* dst = out.data() + b * rows * cols;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, batch, rows, cols](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t b = 0; b < batch; ++b) {
                             const double* src = g.data() + b * rows * cols;
                             double* dst = ga.data() + b * rows * cols;
                             for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] += src[j * rows + i];
                           }
                         },
                         "transpose");
}

/// Matrix product.
///
/// Two forms: `a[..., k] x b[k, n]` (b shared across all leading rows of a),
/// and the batched `a[N, m, k] x b[N, k, n]`.
/// Gradients: dA = dC * B^T, dB = A^T * dC.
inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 && bv.rank() != 2) throw ShapeError("matmul: unsupported ranks");
  const std::size_t ia = a.id(), ib = b.id();
  if (bv.rank() == 2) {
    const std::size_t k = bv.dim(0), n = bv.dim(1);
    if (av.shape().back() != k) {
      throw ShapeError("matmul: inner extents differ " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
    }
    const std::size_t m = av.numel() / k;
    Shape shape = av.shape();
    shape.back() = n;
    Tensor out(shape);
    kernels::gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    return a.tape().record(std::move(out), {ia, ib},
                           [ia, ib, m, k, n](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad_of(self);
                             if (t.requires_grad(ia)) {
                               kernels::gemm_nt(g.data(), t.value(ib).data(), t.grad_buffer(ia).data(), m, n, k, true);
                             }
                             if (t.requires_grad(ib)) {
                               kernels::gemm_tn(t.value(ia).data(), g.data(), t.grad_buffer(ib).data(), k, m, n, true);
                             }
                           },
                           "matmul");
  }
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw ShapeError("matmul: incompatible batched shapes " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm_nn(av.data() + i * m * k, bv.data() + i * k * n, out.data() + i * m * n, m, k, n, false);
  }
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib, batch, m, k, n](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
                           for (std::size_t i = 0; i < batch; ++i) {
                             const double* gi = g.data() + i * m * n;
                             if (ga) {
                               kernels::gemm_nt(gi, t.value(ib).data() + i * k * n,
                                                t.grad_buffer(ia).data() + i * m * k, m, n, k, true);
                             }
                             if (gb) {
                               kernels::gemm_tn(t.value(ia).data() + i * m * k, gi,
                                                t.grad_buffer(ib).data() + i * k * n, k, m, n, true);
                             }
                           }
                         },
                         "matmul");
}

/// x * W + b with W[in, out] and b[out].
inline Var affine(const Var& x, const Var& weight, const Var& bias) {
  if (bias.value().rank() != 1 || weight.value().rank() != 2 || bias.value().dim(0) != weight.value().dim(1)) {
    throw ShapeError("affine: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

/// tanh-approximation GELU.
inline Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& xv = t.value(ix);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                             const double v = xv[i];
                             const double th = std::tanh(kC * (v + kA * v * v * v));
                             const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
                             gx[i] += g[i] * d;
                           }
                         },
                         "gelu");
}

/// Normalizes each row of the last axis to zero mean and unit variance, then applies gamma/beta.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  if (eps <= 0.0) throw UsageError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gamma.value().numel() != d || beta.value().numel() != d) throw ShapeError("layer_norm: gamma/beta extent");
  const std::size_t rows = xv.numel() / d;
  Tensor out = Tensor::zeros_like(xv);
  Tensor normalized = Tensor::zeros_like(xv);
  std::vector<double> inv_std(rows);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (row[j] - mu) * inv_std[r];
      normalized[r * d + j] = xhat;
      out[r * d + j] = gv[j] * xhat + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, d, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)](Tape& t,
                                                                                               std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          Tensor dgamma({d}), dbeta({d});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              dgamma[j] += g[r * d + j] * normalized[r * d + j];
              dbeta[j] += g[r * d + j];
            }
          detail::accumulate(t, ig, dgamma);
          detail::accumulate(t, ib, dbeta);
        }
        if (!t.requires_grad(ix)) return;
        Tensor& gx = t.grad_buffer(ix);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = g[r * d + j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * normalized[r * d + j];
          }
          mean_d /= static_cast<double>(d);
          mean_dx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - normalized[r * d + j] * mean_dx);
          }
        }
      },
      "layer_norm");
}

/// Softmax over the last axis with a binary key mask.
///
/// `mask` has shape [G, K] (or [K]) where K is the last extent of x; the rows
/// of x are split into G consecutive groups and group g uses mask row g. A
/// masked position gets an additive -infinity before normalization, so its
/// weight is exactly zero. Every row needs at least one unmasked position.
inline Var masked_softmax(const Var& x, const Tensor& mask) {
  const Tensor& xv = x.value();
  const std::size_t k = xv.shape().back();
  if (mask.shape().back() != k) throw ShapeError("masked_softmax: mask last extent differs from x");
  const std::size_t rows = xv.numel() / k;
  const std::size_t groups = mask.numel() / k;
  if (rows % groups != 0) throw ShapeError("masked_softmax: mask rows do not divide x rows");
  const std::size_t per_group = rows / groups;
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* m = mask.data() + (r / per_group) * k;
    const double* row = xv.data() + r * k;
    double* dst = out.data() + r * k;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (m[j] != 0.0) top = std::max(top, row[j]);
    if (top == -std::numeric_limits<double>::infinity()) {
      throw NumericError("masked_softmax: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      dst[j] = m[j] != 0.0 ? std::exp(row[j] - top) : 0.0;
      total += dst[j];
    }
    for (std::size_t j = 0; j < k; ++j) dst[j] /= total;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, k, rows](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& y = t.value(self);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
                             for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
                           }
                         },
                         "masked_softmax");
}

/// [B, L, H*dh] -> [B*H, L, dh]
inline Var split_heads(const Var& x, std::size_t heads) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || heads == 0 || xv.dim(2) % heads != 0) throw ShapeError("split_heads: bad shape");
  const std::size_t b = xv.dim(0), l = xv.dim(1), d = xv.dim(2), dh = d / heads;
  Tensor out({b * heads, l, dh});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j)
          out[((bi * heads + h) * l + li) * dh + j] = xv[(bi * l + li) * d + h * dh + j];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, b, l, d, dh, heads](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t bi = 0; bi < b; ++bi)
                             for (std::size_t li = 0; li < l; ++li)
                               for (std::size_t h = 0; h < heads; ++h)
                                 for (std::size_t j = 0; j < dh; ++j)
                                   gx[(bi * l + li) * d + h * dh + j] += g[((bi * heads + h) * l + li) * dh + j];
                         },
                         "split_heads");
}

/// [B*H, L, dh] -> [B, L, H*dh]
inline Var merge_heads(const Var& x, std::size_t heads) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || heads == 0 || xv.dim(0) % heads != 0) throw ShapeError("merge_heads: bad shape");
  const std::size_t b = xv.dim(0) / heads, l = xv.dim(1), dh = xv.dim(2), d = dh * heads;
  Tensor out({b, l, d});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j)
          out[(bi * l + li) * d + h * dh + j] = xv[((bi * heads + h) * l + li) * dh + j];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, b, l, d, dh, heads](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t bi = 0; bi < b; ++bi)
                             for (std::size_t li = 0; li < l; ++li)
                               for (std::size_t h = 0; h < heads; ++h)
                                 for (std::size_t j = 0; j < dh; ++j)
                                   gx[((bi * heads + h) * l + li) * dh + j] += g[(bi * l + li) * d + h * dh + j];
                         },
                         "merge_heads");
}

/// Inverted dropout; identity when p == 0.
inline Var dropout(const Var& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw UsageError("dropout rate must lie in [0, 1)");
  if (p == 0.0) return x;
  Tensor keep = Tensor::zeros_like(x.value());
  const double factor = 1.0 / (1.0 - p);
  for (double& v : keep.values()) v = rng.uniform() >= p ? factor : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= keep[i];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, keep = std::move(keep)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * keep[i];
                         },
                         "dropout");
}

/// Mean of x[B, L, D] over the positions where mask[B, L] is nonzero.
inline Var masked_mean_pool(const Var& x, const Tensor& mask) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || mask.rank() != 2 || mask.dim(0) != xv.dim(0) || mask.dim(1) != xv.dim(1)) {
    throw ShapeError("masked_mean_pool: mask " + shape_string(mask.shape()) + " vs x " + shape_string(xv.shape()));
  }
  const std::size_t b = xv.dim(0), l = xv.dim(1), d = xv.dim(2);
  std::vector<double> weight(b * l);
  for (std::size_t bi = 0; bi < b; ++bi) {
    double count = 0.0;
    for (std::size_t li = 0; li < l; ++li) count += mask[bi * l + li] != 0.0 ? 1.0 : 0.0;
    if (count == 0.0) throw NumericError("masked_mean_pool: sample " + std::to_string(bi) + " has no valid position");
    for (std::size_t li = 0; li < l; ++li) weight[bi * l + li] = mask[bi * l + li] != 0.0 ? 1.0 / count : 0.0;
  }
  Tensor out({b, d});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t li = 0; li < l; ++li) {
      const double w = weight[bi * l + li];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out[bi * d + j] += w * xv[(bi * l + li) * d + j];
    }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, b, l, d, weight = std::move(weight)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t bi = 0; bi < b; ++bi)
                             for (std::size_t li = 0; li < l; ++li) {
                               const double w = weight[bi * l + li];
                               if (w == 0.0) continue;
                               for (std::size_t j = 0; j < d; ++j) gx[(bi * l + li) * d + j] += w * g[bi * d + j];
                             }
                         },
                         "masked_mean_pool");
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean squared difference between pred and a constant target with the same element count.
inline Var mse_loss(const Var& pred, const Tensor& target) {
  const Tensor& pv = pred.value();
  if (pv.numel() != target.numel()) throw ShapeError("mse_loss: prediction/target sizes differ");
  if (pv.numel() == 0) throw ShapeError("mse_loss: empty batch");
  const double n = static_cast<double>(pv.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) total += (pv[i] - target[i]) * (pv[i] - target[i]);
  const std::size_t ip = pred.id();
  return pred.tape().record(Tensor::scalar(total / n), {ip},
                            [ip, target, n](Tape& t, std::size_t self) {
                              const double g = t.grad_of(self)[0];
                              const Tensor& pv = t.value(ip);
                              Tensor& gp = t.grad_buffer(ip);
                              for (std::size_t i = 0; i < pv.numel(); ++i) gp[i] += g * 2.0 * (pv[i] - target[i]) / n;
                            },
                            "mse_loss");
}

/// Mean negative log-softmax of the true class over logits[B, C].
/// `sample_mask` (optional, length B) excludes rows whose entry is zero.
inline Var cross_entropy_loss(const Var& logits, std::span<const int> labels, std::span<const double> sample_mask = {}) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw ShapeError("cross_entropy_loss: logits must be [B, C]");
  const std::size_t b = lv.dim(0), c = lv.dim(1);
  if (labels.size() != b) throw ShapeError("cross_entropy_loss: label count differs from batch");
  if (!sample_mask.empty() && sample_mask.size() != b) throw ShapeError("cross_entropy_loss: mask length");
  Tensor probs = Tensor::zeros_like(lv);
  std::vector<double> weight(b, 1.0);
  double active = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw UsageError("cross_entropy_loss: class index " + std::to_string(labels[i]) + " out of range");
    }
    if (!sample_mask.empty()) weight[i] = sample_mask[i] != 0.0 ? 1.0 : 0.0;
    active += weight[i];
    const double* row = lv.data() + i * c;
    double top = row[0];
    for (std::size_t j = 1; j < c; ++j) top = std::max(top, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - top);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - top) / z;
    total -= weight[i] * (row[labels[i]] - top - std::log(z));
  }
  if (active == 0.0) throw ShapeError("cross_entropy_loss: empty batch");
  std::vector<int> label_copy(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.tape().record(
      Tensor::scalar(total / active), {il},
      [il, b, c, active, probs = std::move(probs), weight = std::move(weight), label_copy = std::move(label_copy)](
          Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        Tensor& gl = t.grad_buffer(il);
        for (std::size_t i = 0; i < b; ++i) {
          if (weight[i] == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const double indicator = static_cast<int>(j) == label_copy[i] ? 1.0 : 0.0;
            gl[i * c + j] += g * weight[i] * (probs[i * c + j] - indicator) / active;
          }
        }
      },
      "cross_entropy_loss");
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// |a - b| / max(|a|, |b|, 1e-6). The floor keeps exactly-zero gradients (for example
/// a key bias under softmax shift invariance) from turning difference roundoff into failures.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Largest relative error between the tape gradient of a scalar function and
/// central finite differences, taken over every coordinate of `point`.
inline double grad_check(const std::function<Var(Tape&, const Var&)>& function, const Tensor& point,
                         double h = 1e-5) {
  if (!(h > 0.0)) throw UsageError("grad_check: step h must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.input(point);
    Var loss = function(tape, x);
    tape.backward(loss);
    analytic = tape.grad(x);
  }
  auto evaluate = [&](const Tensor& at) {
    Tape tape;
    Var x = tape.input(at);
    return function(tape, x).value().item();
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = evaluate(probe);
    probe[i] = original - h;
    const double down = evaluate(probe);
    probe[i] = original;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Same check taken over every entry of a set of parameters. `loss` builds the
/// full forward pass on a fresh tape and returns the scalar loss.
inline double grad_check_parameters(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> parameters,
                                    double h = 1e-5) {
  if (!(h > 0.0)) throw UsageError("grad_check: step h must be positive");
  for (Parameter* p : parameters) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : parameters) analytic.push_back(p->grad);
  auto evaluate = [&]() {
    Tape tape;
    return loss(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < parameters.size(); ++k) {
    Tensor& value = parameters[k]->value;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double original = value[i];
      value[i] = original + h;
      const double up = evaluate();
      value[i] = original - h;
      const double down = evaluate();
      value[i] = original;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  for (Parameter* p : parameters) p->zero_grad();
  return worst;
}

}  // namespace herdlife::ag
