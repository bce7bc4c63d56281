#pragma once

#include <cmath>
#include <string>

#include "crash/diff/ops.hpp"
#include "crash/model/config.hpp"
#include "crash/model/params.hpp"

namespace crash::model {

/// Object Focus Attention weights. One query MLP serves both hidden summaries and
/// one key/value MLP feeds both projections.
template <class T>
struct OfaWeights {
  Mlp<T> query;  // d_h -> d -> d
  Mlp<T> kv;     // d -> d -> d
  T wq1, wq2, wk, wv;
  T alpha, beta;
};

template <class T, class Make>
OfaWeights<T> make_ofa(Make& make, const ModelConfig& cfg) {
  const std::size_t d = cfg.d();
  OfaWeights<T> p;
  p.query = make_mlp<T>(make, "ofa.query", cfg.d_h, d, d);
  p.kv = make_mlp<T>(make, "ofa.kv", d, d, d);
  p.wq1 = make("ofa.wq1", Shape{d, d}, glorot(d, d));
  p.wq2 = make("ofa.wq2", Shape{d, d}, glorot(d, d));
  p.wk = make("ofa.wk", Shape{d, d}, glorot(d, d));
  p.wv = make("ofa.wv", Shape{d, d}, glorot(d, d));
  p.alpha = make("ofa.alpha", Shape{}, constant(1.0));
  p.beta = make("ofa.beta", Shape{}, constant(1.0));
  return p;
}

/// TFA summaries of the two GRU layers from the previous frame, each [d_h].
struct FusedHidden {
  Var hbar1;
  Var hbar2;
};

inline FusedHidden zero_fused(Tape& tape, std::size_t d_h) {
  return {tape.constant(Tensor(Shape{d_h})), tape.constant(Tensor(Shape{d_h}))};
}

struct OfaResult {
  Var out;        // [n x d]
  Var attention;  // [1 x n]; every query row shares it because the queries are broadcast
};

inline OfaResult ofa_attend(Var objects, const FusedHidden& fused, const OfaWeights<Var>& p) {
  using namespace diff;
  const Shape& s = objects.value().shape();
  if (s.rank() != 2 || p.wk.value().shape()[0] != s[1])
    throw DimensionError("ofa_forward: objects " + s.str() + " for d=" +
                         std::to_string(p.wk.value().shape()[0]));
  const std::size_t n = s[0], d = s[1];
  const Var q1 = matmul(mlp(p.query, fused.hbar1), p.wq1);
  const Var q2 = matmul(mlp(p.query, fused.hbar2), p.wq2);
  const Var kv = mlp(p.kv, objects);
  const Var keys = matmul(kv, p.wk);
  const Var values = matmul(kv, p.wv);
  const Var s1 = matmul_nt(reshape(q1, Shape{1, d}), keys);
  const Var s2 = matmul_nt(reshape(q2, Shape{1, d}), keys);
  const Var scores =
      scale(add(mul_scalar(p.alpha, s1), mul_scalar(p.beta, s2)), 1.0 / std::sqrt(double(d)));
  const Var attn = softmax(scores, 1);
  const Var row = reshape(matmul(attn, values), Shape{d});
  return {broadcast_rows(row, n), attn};
}

/// Enhanced object features [n x d].
inline Var ofa_forward(Var objects, const FusedHidden& fused, const OfaWeights<Var>& p) {
  return ofa_attend(objects, fused, p).out;
}

}  // namespace crash::model
