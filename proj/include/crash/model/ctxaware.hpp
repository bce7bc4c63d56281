#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "crash/diff/complex.hpp"
#include "crash/diff/ops.hpp"
#include "crash/model/config.hpp"
#include "crash/model/params.hpp"

namespace crash::model {

using diff::CVar;

/// Context module weights. `wf_*` exist only with the spectral path and `cab`
/// only when the attention block is on as well.
template <class T>
struct CtxWeights {
  T conv_w;  // [c x 1 x kw]
  T conv_b;  // [c]
  std::optional<T> wf_re, wf_im;  // [c x h x w]
  std::optional<Mlp<T>> cab;      // 2c -> c -> c
  T collapse_w;  // [1 x c x 1]
  T collapse_b;  // [1]
  Mlp<T> head;   // d -> d -> d
};

template <class T, class Make>
CtxWeights<T> make_ctx(Make& make, const ModelConfig& cfg) {
  const std::size_t c = cfg.c, d = cfg.d();
  CtxWeights<T> p;
  p.conv_w = make("ctx.conv_w", Shape{c, 1, cfg.kw}, glorot(cfg.kw, c));
  p.conv_b = make("ctx.conv_b", Shape{c}, constant(0.0));
  if (cfg.ablation.fft) {
    p.wf_re = make("ctx.wf_re", Shape{c, cfg.h, cfg.w}, constant(1.0));
    p.wf_im = make("ctx.wf_im", Shape{c, cfg.h, cfg.w}, constant(0.0));
    if (cfg.ablation.cab) p.cab = make_mlp<T>(make, "ctx.cab", 2 * c, c, c);
  }
  p.collapse_w = make("ctx.collapse_w", Shape{1, c, 1}, glorot(c, 1));
  p.collapse_b = make("ctx.collapse_b", Shape{1}, constant(0.0));
  p.head = make_mlp<T>(make, "ctx.head", d, d, d);
  return p;
}

struct CtxOptions {
  /// Reject an inverse transform whose imaginary part is not negligible.
  bool check_residue = true;
};

/// F_c [d] -> [c x h x w] by a same-padded 1D convolution.
inline Var channel_expand(Var context, const CtxWeights<Var>& p, std::size_t h, std::size_t w) {
  if (context.value().rank() != 1 || context.value().numel() != h * w)
    throw DimensionError("channel_expand: context " + context.value().shape().str() +
                         " is not h*w = " + std::to_string(h * w));
  const Var x = diff::conv1d_same(context, p.conv_w, p.conv_b);
  return diff::reshape(x, Shape{x.value().shape()[0], h, w});
}

/// S_c = W_f * fft2(x), elementwise complex product.
inline CVar spectral_gate(Var x, CVar gate) {
  if (!(x.value().shape() == gate.re.value().shape()))
    throw DimensionError("spectral_gate: " + x.value().shape().str() + " vs gate " +
                         gate.re.value().shape().str());
  const Var zero = x.tape()->constant(Tensor(x.value().shape()));
  return diff::cmul(gate, diff::fft2(CVar{x, zero}));
}

struct CabResult {
  CVar out;
  Var weights;  // [c], sums to 1
};

inline CabResult cab_attend(CVar s, const Mlp<Var>& p) {
  using namespace diff;
  const Shape& sh = s.re.value().shape();
  const std::size_t c = sh[0];
  const Var mag = reshape(cabs(s, 1e-12), Shape{c, sh.numel() / c});
  const Var desc = concat({mean_axis(mag, 1), max_axis(mag, 1)});
  const Var a = softmax(mlp(p, desc), 0);
  return {{scale_channels(a, s.re), scale_channels(a, s.im)}, a};
}

/// Throws NumericalFault unless max|im| <= 1e-6 (1 + max|re|).
inline void check_imaginary_residue(const Tensor& re, const Tensor& im) {
  double mre = 0.0, mim = 0.0;
  for (double v : re.data()) mre = std::max(mre, std::abs(v));
  for (double v : im.data()) mim = std::max(mim, std::abs(v));
  if (mim > 1e-6 * (1.0 + mre))
    throw NumericalFault("ctx_forward: imaginary residue " + std::to_string(mim) +
                         " after inverse transform");
}

/// Context-aware vector F̄_c [d].
inline Var ctx_forward(Var context, const CtxWeights<Var>& p, const ModelConfig& cfg,
                       const CtxOptions& opt = {}) {
  using namespace diff;
  Var field = channel_expand(context, p, cfg.h, cfg.w);
  if (p.wf_re) {
    // The real part of the inverse transform only sees the gate's conjugate-symmetric
    // part; applying that part directly keeps the CAB statistics consistent with it.
    CVar s = spectral_gate(field, diff::hermitian_part(CVar{*p.wf_re, *p.wf_im}));
    if (p.cab) s = cab_attend(s, *p.cab).out;
    const CVar back = ifft2(s);
    if (opt.check_residue) check_imaginary_residue(back.re.value(), back.im.value());
    field = back.re;
  }
  const std::size_t c = cfg.c, d = cfg.d();
  // collapse: out[i] = b + sum_j w[j] field[j, i]
  const Var flat = transpose(reshape(field, Shape{c, d}));
  const Var collapsed = linear(flat, reshape(p.collapse_w, Shape{c, 1}), p.collapse_b);
  return mlp(p.head, reshape(collapsed, Shape{d}));
}

}  // namespace crash::model
