#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "crash/diff/tape.hpp"
#include "crash/diff/tensor.hpp"
#include "crash/error.hpp"

namespace crash::diff {

namespace detail {

inline Tape& tape_of(Var v) {
  if (!v.valid()) throw PreconditionError("op on an unbound Var");
  return *v.tape();
}

inline void same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw PreconditionError("op mixes Vars from different tapes");
}

template <class Fwd, class Dfdx>
Var unary(Var x, Fwd f, Dfdx dfdx) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  return t.record(std::move(out), {x}, [dfdx](Tape& tp, NodeId self) {
    const NodeId a = tp.input(self, 0);
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(a);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

/// Splits a shape around `axis` into (outer, len, inner) strides.
struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + s.str());
  return {s.span_numel(0, axis), s[axis], s.span_numel(axis + 1, s.rank())};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      const NodeId in = t.input(self, k);
      if (!t.requires_grad(in)) continue;
      Tensor& gi = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ia = t.input(self, 0), ib = t.input(self, 1);
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
  });
}

inline Var scale(Var x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var add_const(Var x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

/// 1 - x
inline Var one_minus(Var x) {
  return detail::unary(x, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(Var x) {
  return detail::unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

/// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Broadcasting products

/// x[..., N] + b[N]
inline Var add_bias(Var x, Var b) {
  detail::same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  const std::size_t n = bv.numel();
  if (xv.rank() == 0 || bv.rank() != 1 || xv.shape().back() != n)
    throw DimensionError("add_bias: " + xv.shape().str() + " + " + bv.shape().str());
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % n];
  return x.tape()->record(std::move(out), {x, b}, [n](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ix = t.input(self, 0), ib = t.input(self, 1);
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i % n] += g[i];
    }
  });
}

/// s * x for a one-element s.
inline Var mul_scalar(Var s, Var x) {
  detail::same_tape(s, x);
  if (s.value().numel() != 1) throw DimensionError("mul_scalar: s must hold one value");
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v *= sv;
  return x.tape()->record(std::move(out), {s, x}, [](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId is = t.input(self, 0), ix = t.input(self, 1);
    const double sv = t.value(is)[0];
    const Tensor& xv = t.value(ix);
    if (t.requires_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
      t.grad_buffer(is)[0] += acc;
    }
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * sv;
    }
  });
}

/// a[c] scales channel j of x[c, ...].
inline Var scale_channels(Var a, Var x) {
  detail::same_tape(a, x);
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  if (av.rank() != 1 || xv.rank() < 1 || xv.shape()[0] != av.numel())
    throw DimensionError("scale_channels: " + av.shape().str() + " vs " + xv.shape().str());
  const std::size_t c = av.numel();
  const std::size_t inner = xv.numel() / c;
  Tensor out = xv;
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < inner; ++i) out[j * inner + i] *= av[j];
  return x.tape()->record(std::move(out), {a, x}, [c, inner](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ia = t.input(self, 0), ix = t.input(self, 1);
    const Tensor& av = t.value(ia);
    const Tensor& xv = t.value(ix);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) acc += g[j * inner + i] * xv[j * inner + i];
        ga[j] += acc;
      }
    }
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad_buffer(ix);
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t i = 0; i < inner; ++i) gx[j * inner + i] += g[j * inner + i] * av[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products. A rank-1 left operand is treated as a single row and the
// result keeps rank 1.

namespace detail {

struct RowView {
  std::size_t rows, cols;
  bool vector;
};

inline RowView as_rows(const Tensor& t, const char* where) {
  if (t.rank() == 1) return {1, t.shape()[0], true};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1], false};
  throw DimensionError(std::string(where) + ": expected rank 1 or 2, got " + t.shape().str());
}

// out[p x r] += a[p x q] * b[q x r]
inline void gemm_nn(const double* a, const double* b, double* out, std::size_t p, std::size_t q,
                    std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* o = out + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      const double* bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) o[j] += aik * bk[j];
    }
  }
}

// out[p x q] += g[p x r] * b[q x r]^T
inline void gemm_nt(const double* g, const double* b, double* out, std::size_t p, std::size_t q,
                    std::size_t r) {
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q; ++k) {
      const double* gi = g + i * r;
      const double* bk = b + k * r;
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) acc += gi[j] * bk[j];
      out[i * q + k] += acc;
    }
}

// out[q x r] += a[p x q]^T * g[p x r]
inline void gemm_tn(const double* a, const double* g, double* out, std::size_t p, std::size_t q,
                    std::size_t r) {
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      const double* gi = g + i * r;
      double* o = out + k * r;
      for (std::size_t j = 0; j < r; ++j) o[j] += aik * gi[j];
    }
}

inline Var matmul_impl(Var x, Var w, const Var* b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const RowView xr = as_rows(xv, "matmul");
  if (wv.rank() != 2 || wv.shape()[0] != xr.cols)
    throw DimensionError("matmul: " + xv.shape().str() + " x " + wv.shape().str());
  const std::size_t p = xr.rows, q = xr.cols, r = wv.shape()[1];
  if (b && (b->value().rank() != 1 || b->value().numel() != r))
    throw DimensionError("linear: bias " + b->value().shape().str() + " for width " +
                         std::to_string(r));
  Tensor out(xr.vector ? Shape{r} : Shape{p, r});
  if (b)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < r; ++j) out[i * r + j] = b->value()[j];
  gemm_nn(xv.raw(), wv.raw(), out.raw(), p, q, r);
  auto backward = [p, q, r](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ix = t.input(self, 0), iw = t.input(self, 1);
    if (t.requires_grad(ix)) gemm_nt(g.raw(), t.value(iw).raw(), t.grad_buffer(ix).raw(), p, q, r);
    if (t.requires_grad(iw)) gemm_tn(t.value(ix).raw(), g.raw(), t.grad_buffer(iw).raw(), p, q, r);
  };
  if (!b) return x.tape()->record(std::move(out), {x, w}, backward);
  return x.tape()->record(std::move(out), {x, w, *b}, [backward, p, r](Tape& t, NodeId self) {
    backward(t, self);
    const NodeId ib = t.input(self, 2);
    if (!t.requires_grad(ib)) return;
    const Tensor& g = t.grad(self);
    Tensor& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < r; ++j) gb[j] += g[i * r + j];
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  return detail::matmul_impl(a, b, nullptr);
}

/// x W + b with W [in x out] and b [out].
inline Var linear(Var x, Var w, Var b) {
  detail::same_tape(x, w);
  detail::same_tape(x, b);
  return detail::matmul_impl(x, w, &b);
}

/// a b^T for a [p x q], b [r x q].
inline Var matmul_nt(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1])
    throw DimensionError("matmul_nt: " + av.shape().str() + " x " + bv.shape().str() + "^T");
  const std::size_t p = av.shape()[0], q = av.shape()[1], r = bv.shape()[0];
  Tensor out(Shape{p, r});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < q; ++k) acc += av[i * q + k] * bv[j * q + k];
      out[i * r + j] = acc;
    }
  return a.tape()->record(std::move(out), {a, b}, [p, q, r](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ia = t.input(self, 0), ib = t.input(self, 1);
    // dA = G B, dB = G^T A
    if (t.requires_grad(ia))
      detail::gemm_nn(g.raw(), t.value(ib).raw(), t.grad_buffer(ia).raw(), p, r, q);
    if (t.requires_grad(ib))
      detail::gemm_tn(g.raw(), t.value(ia).raw(), t.grad_buffer(ib).raw(), p, r, q);
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + av.shape().str());
  const std::size_t p = av.shape()[0], q = av.shape()[1];
  Tensor out(Shape{q, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[j * p + i] = av[i * q + j];
  return a.tape()->record(std::move(out), {a}, [p, q](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(t.input(self, 0));
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += g[j * p + i];
  });
}

// ---------------------------------------------------------------------------
// Normalizations and reductions

/// Max-subtracted softmax along `axis`.
inline Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const auto [outer, len, inner] = detail::split_axis(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) m = std::max(m, xv[base + k * inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - m);
        out[base + k * inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= s;
    }
  return x.tape()->record(std::move(out), {x}, [outer, len, inner](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
  });
}

/// Softmax along the last axis.
inline Var softmax_last(Var x) { return softmax(x, x.value().rank() - 1); }

/// Gated linear unit over the last axis: a * sigmoid(b) for x = [a | b].
inline Var glu(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || xv.shape().back() % 2 != 0)
    throw DimensionError("glu: last extent must be even, got " + xv.shape().str());
  const std::size_t two_d = xv.shape().back();
  const std::size_t d = two_d / 2;
  const std::size_t rows = xv.numel() / two_d;
  Tensor out(xv.shape().with_back(d));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = xv[r * two_d + j] * sigmoid_scalar(xv[r * two_d + d + j]);
  return x.tape()->record(std::move(out), {x}, [rows, d, two_d](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ix = t.input(self, 0);
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        const double a = xv[r * two_d + j];
        const double s = sigmoid_scalar(xv[r * two_d + d + j]);
        const double gi = g[r * d + j];
        gx[r * two_d + j] += gi * s;
        gx[r * two_d + d + j] += gi * a * s * (1.0 - s);
      }
  });
}

/// Sum of all elements as a scalar.
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record(Tensor::scalar(s), {x}, [](Tape& t, NodeId self) {
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (double& v : gx.data()) v += g;
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

/// Sum along `axis`, removing it.
inline Var sum_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const auto [outer, len, inner] = detail::split_axis(xv.shape(), axis);
  Tensor out(xv.shape().without(axis));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t in = 0; in < inner; ++in)
        out[o * inner + in] += xv[(o * len + k) * inner + in];
  return x.tape()->record(std::move(out), {x}, [outer, len, inner](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t in = 0; in < inner; ++in)
          gx[(o * len + k) * inner + in] += g[o * inner + in];
  });
}

inline Var mean_axis(Var x, std::size_t axis) {
  const double len = static_cast<double>(detail::split_axis(x.value().shape(), axis).len);
  return scale(sum_axis(x, axis), 1.0 / len);
}

/// Max along `axis`, removing it. The gradient routes to the first maximal entry.
inline Var max_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const auto [outer, len, inner] = detail::split_axis(xv.shape(), axis);
  Tensor out(xv.shape().without(axis));
  std::vector<std::size_t> argmax(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t best = (o * len) * inner + in;
      for (std::size_t k = 1; k < len; ++k) {
        const std::size_t i = (o * len + k) * inner + in;
        if (xv[i] > xv[best]) best = i;
      }
      argmax[o * inner + in] = best;
      out[o * inner + in] = xv[best];
    }
  return x.tape()->record(std::move(out), {x}, [argmax = std::move(argmax)](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  return x.tape()->record(std::move(out), {x}, [](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

namespace detail {

// Joins same-shaped parts; `stacked` adds a leading axis, otherwise rank-1 parts concatenate.
inline Var join(std::span<const Var> parts, bool stacked) {
  if (parts.empty()) throw DimensionError("concat/stack: no inputs");
  Tape& t = tape_of(parts[0]);
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (stacked && !(p.value().shape() == parts[0].value().shape()))
      throw DimensionError("stack: shape mismatch " + p.value().shape().str());
    if (!stacked && p.value().rank() != 1)
      throw DimensionError("concat: expected rank-1 inputs, got " + p.value().shape().str());
    offsets.push_back(total);
    total += p.value().numel();
  }
  Shape shape;
  if (stacked) {
    shape.push_back(parts.size());
    const Shape& s = parts[0].value().shape();
    for (std::size_t i = 0; i < s.rank(); ++i) shape.push_back(s[i]);
  } else {
    shape.push_back(total);
  }
  std::vector<double> data;
  data.reserve(total);
  for (const Var& p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<NodeId> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record_wide(Tensor(shape, std::move(data)), parts,
                      [ids, offsets](Tape& tp, NodeId self) {
                        const Tensor& g = tp.grad(self);
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (!tp.requires_grad(ids[k])) continue;
                          Tensor& gk = tp.grad_buffer(ids[k]);
                          for (std::size_t i = 0; i < gk.numel(); ++i) gk[i] += g[offsets[k] + i];
                        }
                      });
}

}  // namespace detail

/// Concatenates rank-1 tensors.
inline Var concat(std::span<const Var> parts) { return detail::join(parts, false); }
inline Var concat(std::initializer_list<Var> parts) {
  return detail::join(std::span<const Var>(parts.begin(), parts.size()), false);
}

/// Stacks same-shaped tensors along a new leading axis.
inline Var stack(std::span<const Var> parts) { return detail::join(parts, true); }

/// x[i, ...] along the leading axis.
inline Var select(Var x, std::size_t i) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || i >= xv.shape()[0])
    throw DimensionError("select: index " + std::to_string(i) + " for " + xv.shape().str());
  const std::size_t inner = xv.numel() / xv.shape()[0];
  Shape s = xv.shape().without(0);
  std::vector<double> data(xv.raw() + i * inner, xv.raw() + (i + 1) * inner);
  return x.tape()->record(Tensor(s, std::move(data)), {x}, [i, inner](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t k = 0; k < inner; ++k) gx[i * inner + k] += g[k];
  });
}

/// x[begin : begin + len, ...] along the leading axis.
inline Var slice(Var x, std::size_t begin, std::size_t len) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || len == 0 || begin + len > xv.shape()[0])
    throw DimensionError("slice: [" + std::to_string(begin) + ", +" + std::to_string(len) +
                         ") of " + xv.shape().str());
  const std::size_t inner = xv.numel() / xv.shape()[0];
  Shape s;
  s.push_back(len);
  for (std::size_t i = 1; i < xv.rank(); ++i) s.push_back(xv.shape()[i]);
  const std::size_t off = begin * inner, count = len * inner;
  std::vector<double> data(xv.raw() + off, xv.raw() + off + count);
  return x.tape()->record(Tensor(s, std::move(data)), {x}, [off, count](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t k = 0; k < count; ++k) gx[off + k] += g[k];
  });
}

/// Repeats a rank-1 tensor as `rows` identical rows.
inline Var broadcast_rows(Var v, std::size_t rows) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1) throw DimensionError("broadcast_rows: expected rank 1, got " + vv.shape().str());
  const std::size_t n = vv.numel();
  Tensor out(Shape{rows, n});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(vv.raw(), vv.raw() + n, out.raw() + r * n);
  return v.tape()->record(std::move(out), {v}, [rows, n](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gv = t.grad_buffer(t.input(self, 0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j];
  });
}

/// 1D cross-correlation of a single-channel signal x[L] into c channels with
/// zero "same" padding: out[j, i] = b[j] + sum_k w[j, 0, k] x[i + k - (kw-1)/2].
inline Var conv1d_same(Var x, Var w, Var b) {
  detail::same_tape(x, w);
  detail::same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 1 || wv.rank() != 3 || wv.shape()[1] != 1 || bv.rank() != 1 ||
      bv.numel() != wv.shape()[0])
    throw DimensionError("conv1d_same: x " + xv.shape().str() + " w " + wv.shape().str() + " b " +
                         bv.shape().str());
  const std::size_t len = xv.numel(), c = wv.shape()[0], kw = wv.shape()[2];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  Tensor out(Shape{c, len});
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < len; ++i) {
      double acc = bv[j];
      for (std::size_t k = 0; k < kw; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + k) - pad;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) acc += wv[j * kw + k] * xv[src];
      }
      out[j * len + i] = acc;
    }
  return x.tape()->record(std::move(out), {x, w, b}, [len, c, kw, pad](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const NodeId ix = t.input(self, 0), iw = t.input(self, 1), ib = t.input(self, 2);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
    Tensor* gw = t.requires_grad(iw) ? &t.grad_buffer(iw) : nullptr;
    Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < len; ++i) {
        const double gi = g[j * len + i];
        if (gb) (*gb)[j] += gi;
        for (std::size_t k = 0; k < kw; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + k) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          if (gx) (*gx)[src] += gi * wv[j * kw + k];
          if (gw) (*gw)[j * kw + k] += gi * xv[src];
        }
      }
  });
}

}  // namespace crash::diff
