#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "crash/diff/ops.hpp"
#include "crash/diff/tape.hpp"
#include "crash/diff/tensor.hpp"

namespace crash::diff {

/// Complex tensor held as a real/imaginary pair of equal shape.
struct ComplexTensor {
  Tensor re;
  Tensor im;

  ComplexTensor() = default;
  ComplexTensor(Tensor r, Tensor i) : re(std::move(r)), im(std::move(i)) {
    require_same_shape(re, im, "ComplexTensor");
  }
  /// Real tensor lifted with a zero imaginary part.
  static ComplexTensor from_real(Tensor r) {
    Tensor i(r.shape());
    return {std::move(r), std::move(i)};
  }
  const Shape& shape() const { return re.shape(); }
};

/// Complex value on a tape: two real nodes.
struct CVar {
  Var re;
  Var im;
};

inline CVar cmul(CVar a, CVar b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

/// sqrt(re^2 + im^2 + eps), smooth at the origin.
inline Var cabs(CVar z, double eps) {
  return sqrt(add_const(add(square(z.re), square(z.im)), eps));
}

namespace detail {

/// Per-channel 2D DFT over the trailing h x w extent:
/// out[u, v] = scale * sum_{y, x} in[y, x] * exp(sign * 2 pi i (u y / h + v x / w)).
/// Separable: rows first, then columns. Twiddles use exact integer phase reduction.
inline void dft2(const double* in_re, const double* in_im, double* out_re, double* out_im,
                 std::size_t channels, std::size_t h, std::size_t w, double sign, double scale) {
  auto table = [](std::size_t n, std::vector<double>& c, std::vector<double>& s) {
    c.resize(n);
    s.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      c[k] = std::cos(a);
      s[k] = std::sin(a);
    }
  };
  std::vector<double> cw, sw, ch, sh;
  table(w, cw, sw);
  table(h, ch, sh);
  std::vector<double> tr(h * w), ti(h * w);
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t base = c * h * w;
    // Along x for each row y.
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t v = 0; v < w; ++v) {
        double ar = 0.0, ai = 0.0;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t k = (v * x) % w;
          const double cr = cw[k], ci = sign * sw[k];
          const double xr = in_re[base + y * w + x], xi = in_im[base + y * w + x];
          ar += xr * cr - xi * ci;
          ai += xr * ci + xi * cr;
        }
        tr[y * w + v] = ar;
        ti[y * w + v] = ai;
      }
    // Along y for each column v.
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        double ar = 0.0, ai = 0.0;
        for (std::size_t y = 0; y < h; ++y) {
          const std::size_t k = (u * y) % h;
          const double cr = ch[k], ci = sign * sh[k];
          const double xr = tr[y * w + v], xi = ti[y * w + v];
          ar += xr * cr - xi * ci;
          ai += xr * ci + xi * cr;
        }
        out_re[base + u * w + v] = scale * ar;
        out_im[base + u * w + v] = scale * ai;
      }
  }
}

struct Grid {
  std::size_t channels, h, w;
};

inline Grid grid_of(const Shape& s) {
  if (s.rank() == 2) return {1, s[0], s[1]};
  if (s.rank() == 3) return {s[0], s[1], s[2]};
  throw DimensionError("fft2: expected [h x w] or [c x h x w], got " + s.str());
}

// The DFT is linear, so under the real inner product <a, b> = Re sum conj(a) b its
// adjoint is the conjugate-phase transform with the same scale.
inline CVar dft2_op(CVar x, double sign, double scale) {
  same_tape(x.re, x.im);
  require_same_shape(x.re.value(), x.im.value(), "fft2");
  const Grid g = grid_of(x.re.value().shape());
  Tape& t = *x.re.tape();
  const Shape shape = x.re.value().shape();
  Tensor re(shape), im(shape);
  dft2(x.re.value().raw(), x.im.value().raw(), re.raw(), im.raw(), g.channels, g.h, g.w, sign,
       scale);
  // Both parts live in one [2 x ...] node; re/im are selections of it.
  Shape packed;
  packed.push_back(2);
  for (std::size_t i = 0; i < shape.rank(); ++i) packed.push_back(shape[i]);
  std::vector<double> data(re.data().begin(), re.data().end());
  data.insert(data.end(), im.data().begin(), im.data().end());
  const std::size_t n = shape.numel();
  Var both = t.record(Tensor(packed, std::move(data)), {x.re, x.im},
                      [g, sign, scale, n](Tape& tp, NodeId self) {
                        const Tensor& gb = tp.grad(self);
                        std::vector<double> out_re(n), out_im(n);
                        dft2(gb.raw(), gb.raw() + n, out_re.data(), out_im.data(), g.channels,
                             g.h, g.w, -sign, scale);
                        const NodeId a = tp.input(self, 0), b = tp.input(self, 1);
                        if (tp.requires_grad(a)) {
                          Tensor& ga = tp.grad_buffer(a);
                          for (std::size_t i = 0; i < n; ++i) ga[i] += out_re[i];
                        }
                        if (tp.requires_grad(b)) {
                          Tensor& gi = tp.grad_buffer(b);
                          for (std::size_t i = 0; i < n; ++i) gi[i] += out_im[i];
                        }
                      });
  return {select(both, 0), select(both, 1)};
}

}  // namespace detail

/// out[j, u, v] = x[j, (h - u) % h, (w - v) % w]: the frequency grid mirrored through the origin.
inline Var reflect_freq(Var x) {
  const detail::Grid g = detail::grid_of(x.value().shape());
  const std::size_t hw = g.h * g.w;
  std::vector<std::size_t> src(hw);
  for (std::size_t u = 0; u < g.h; ++u)
    for (std::size_t v = 0; v < g.w; ++v) src[u * g.w + v] = ((g.h - u) % g.h) * g.w + (g.w - v) % g.w;
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = xv[c * hw + src[i]];
  return x.tape()->record(std::move(out), {x}, [src, hw, g](Tape& t, NodeId self) {
    const Tensor& gr = t.grad(self);
    Tensor& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t i = 0; i < hw; ++i) gx[c * hw + src[i]] += gr[c * hw + i];
  });
}

/// (z + conj(reflect(z))) / 2, the conjugate-symmetric part of a spectrum.
inline CVar hermitian_part(CVar z) {
  return {scale(add(z.re, reflect_freq(z.re)), 0.5), scale(sub(z.im, reflect_freq(z.im)), 0.5)};
}

/// Unnormalized forward 2D DFT per channel of [c x h x w] (or [h x w]).
inline CVar fft2(CVar x) { return detail::dft2_op(x, -1.0, 1.0); }

/// Inverse 2D DFT carrying the 1/(h w) factor, so ifft2(fft2(x)) == x.
inline CVar ifft2(CVar x) {
  const detail::Grid g = detail::grid_of(x.re.value().shape());
  return detail::dft2_op(x, 1.0, 1.0 / static_cast<double>(g.h * g.w));
}

/// Tensor-level transforms (no tape).
inline ComplexTensor fft2(const ComplexTensor& x) {
  const detail::Grid g = detail::grid_of(x.shape());
  ComplexTensor out{Tensor(x.shape()), Tensor(x.shape())};
  detail::dft2(x.re.raw(), x.im.raw(), out.re.raw(), out.im.raw(), g.channels, g.h, g.w, -1.0, 1.0);
  return out;
}

inline ComplexTensor ifft2(const ComplexTensor& x) {
  const detail::Grid g = detail::grid_of(x.shape());
  ComplexTensor out{Tensor(x.shape()), Tensor(x.shape())};
  detail::dft2(x.re.raw(), x.im.raw(), out.re.raw(), out.im.raw(), g.channels, g.h, g.w, 1.0,
               1.0 / static_cast<double>(g.h * g.w));
  return out;
}

}  // namespace crash::diff
