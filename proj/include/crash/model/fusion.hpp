#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "crash/diff/ops.hpp"
#include "crash/model/config.hpp"
#include "crash/model/objaware.hpp"
#include "crash/model/params.hpp"

namespace crash::model {

/// One GRU layer. Gate columns of `w` and `b` are ordered update | reset | candidate.
template <class T>
struct GruLayer {
  T w;     // [in x 3 d_h]
  T b;     // [3 d_h]
  T u_zr;  // [d_h x 2 d_h], hidden-to-gate for update | reset
  T u_h;   // [d_h x d_h], hidden-to-candidate
};

template <class T, class Make>
GruLayer<T> make_gru_layer(Make& make, const std::string& name, std::size_t in, std::size_t d_h) {
  GruLayer<T> g;
  g.w = make(name + ".w", Shape{in, 3 * d_h}, glorot(in, d_h));
  g.b = make(name + ".b", Shape{3 * d_h}, constant(0.0));
  g.u_zr = make(name + ".u_zr", Shape{d_h, 2 * d_h}, glorot(d_h, d_h));
  g.u_h = make(name + ".u_h", Shape{d_h, d_h}, glorot(d_h, d_h));
  return g;
}

inline Var gru_step(Var x, Var h_prev, const GruLayer<Var>& g) {
  using namespace diff;
  const std::size_t dh = h_prev.value().numel();
  if (g.u_h.value().shape()[0] != dh || x.value().rank() != 1)
    throw DimensionError("gru_step: x " + x.value().shape().str() + ", h " +
                         h_prev.value().shape().str());
  const Var xw = linear(x, g.w, g.b);
  const Var hu = matmul(h_prev, g.u_zr);
  const Var z = sigmoid(add(slice(xw, 0, dh), slice(hu, 0, dh)));
  const Var r = sigmoid(add(slice(xw, dh, dh), slice(hu, dh, dh)));
  const Var cand = tanh(add(slice(xw, 2 * dh, dh), matmul(mul(r, h_prev), g.u_h)));
  // (1 - z) h_prev + z cand
  return add(h_prev, mul(z, sub(cand, h_prev)));
}

/// [F_c | F̄_c | mean over objects of F̄_o].
inline Var fuse_inputs(Var context, Var context_bar, Var objects_bar) {
  return diff::concat({context, context_bar, diff::mean_axis(objects_bar, 0)});
}

/// One TFA layer of one block.
template <class T>
struct TfaLayer {
  std::vector<T> wq, wk, wv;  // m heads, each [d_h x d_h]
  Mlp<T> refine;              // d_h -> d_h -> d_h, after the GLU
};

template <class T>
struct TfaWeights {
  std::array<std::vector<TfaLayer<T>>, 2> blocks;  // k layers per GRU layer
  std::array<T, 2> gamma;                          // [k] mixing weights per block
};

template <class T, class Make>
TfaWeights<T> make_tfa(Make& make, const ModelConfig& cfg) {
  const std::size_t dh = cfg.d_h;
  TfaWeights<T> p;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string block = "tfa.b" + std::to_string(i + 1);
    for (std::size_t y = 0; y < cfg.k; ++y) {
      const std::string layer = block + ".l" + std::to_string(y + 1);
      TfaLayer<T> l;
      for (std::size_t j = 0; j < cfg.m; ++j) {
        const std::string head = layer + ".h" + std::to_string(j + 1);
        l.wq.push_back(make(head + ".wq", Shape{dh, dh}, glorot(dh, dh)));
        l.wk.push_back(make(head + ".wk", Shape{dh, dh}, glorot(dh, dh)));
        l.wv.push_back(make(head + ".wv", Shape{dh, dh}, glorot(dh, dh)));
      }
      l.refine = make_mlp<T>(make, layer + ".refine", dh, dh, dh);
      p.blocks[i].push_back(std::move(l));
    }
    p.gamma[i] = make(block + ".gamma", Shape{cfg.k}, constant(1.0 / static_cast<double>(cfg.k)));
  }
  return p;
}

/// Summed heads of softmax(Q K^T / sqrt(d_h)) V over a window [M x d_h].
inline Var tfa_attention(Var window, const TfaLayer<Var>& l) {
  using namespace diff;
  const double inv = 1.0 / std::sqrt(static_cast<double>(window.value().shape()[1]));
  Var sum;
  for (std::size_t j = 0; j < l.wq.size(); ++j) {
    const Var q = matmul(window, l.wq[j]);
    const Var k = matmul(window, l.wk[j]);
    const Var v = matmul(window, l.wv[j]);
    const Var head = matmul(softmax(scale(matmul_nt(q, k), inv), 1), v);
    sum = sum.valid() ? add(sum, head) : head;
  }
  return sum;
}

/// R̄ = R + softmax_features(MLP(GLU([R | R]))) for the window [M x d_h].
inline Var tfa_block(Var window, const TfaLayer<Var>& l) {
  using namespace diff;
  if (window.value().rank() != 2 || window.value().shape()[1] != l.wq[0].value().shape()[0])
    throw DimensionError("tfa_block: window " + window.value().shape().str());
  const Var r = tfa_attention(window, l);
  // GLU over the duplicated features reduces to R * sigmoid(R).
  const Var gated = mul(r, sigmoid(r));
  return add(r, softmax_last(mlp(l.refine, gated)));
}

/// Time-mean of sum_y gamma_y R̄_y.
inline Var tfa_aggregate(std::span<const Var> outputs, Var gamma) {
  using namespace diff;
  if (outputs.empty() || gamma.value().numel() != outputs.size())
    throw DimensionError("tfa_aggregate: " + std::to_string(outputs.size()) + " outputs, gamma " +
                         gamma.value().shape().str());
  Var acc;
  for (std::size_t y = 0; y < outputs.size(); ++y) {
    const Var term = mul_scalar(select(gamma, y), outputs[y]);
    acc = acc.valid() ? add(acc, term) : term;
  }
  return mean_axis(acc, 0);
}

/// Runs the k-layer stack on one window and aggregates it.
inline Var tfa_summary(Var window, const std::vector<TfaLayer<Var>>& layers, Var gamma) {
  std::vector<Var> outs;
  outs.reserve(layers.size());
  Var x = window;
  for (const TfaLayer<Var>& l : layers) {
    x = tfa_block(x, l);
    outs.push_back(x);
  }
  return tfa_aggregate(outs, gamma);
}

/// Last M states ending at the newest, zero-padded on the left, as [M x d_h].
inline Var hidden_window(const std::vector<Var>& states, std::size_t M, Var zero) {
  std::vector<Var> rows;
  rows.reserve(M);
  const std::size_t have = std::min(M, states.size());
  for (std::size_t i = have; i < M; ++i) rows.push_back(zero);
  for (std::size_t i = states.size() - have; i < states.size(); ++i) rows.push_back(states[i]);
  return diff::stack(rows);
}

/// Prediction head d_h -> d_h -> 1 with sigmoid; returns a [1] tensor.
inline Var predict(const Mlp<Var>& head, Var h2) { return diff::sigmoid(mlp(head, h2)); }

}  // namespace crash::model
