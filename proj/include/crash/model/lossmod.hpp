#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crash/data/video.hpp"
#include "crash/diff/ops.hpp"
#include "crash/model/config.hpp"
#include "crash/model/params.hpp"

namespace crash::model {

inline constexpr double kProbClamp = 1e-7;

/// Enhancement head: multi-head self-attention over the T second-layer states.
template <class T>
struct EnhWeights {
  std::vector<T> wq, wk, wv;  // m_e heads, each [d_h x d_h]
  T wo;                       // [m_e d_h x d_h], mixes the concatenated heads
  Mlp<T> out;                 // d_h -> d_h -> 1
};

template <class T, class Make>
EnhWeights<T> make_enh(Make& make, const ModelConfig& cfg) {
  const std::size_t dh = cfg.d_h;
  EnhWeights<T> p;
  for (std::size_t j = 0; j < cfg.m_e; ++j) {
    const std::string head = "enh.h" + std::to_string(j + 1);
    p.wq.push_back(make(head + ".wq", Shape{dh, dh}, glorot(dh, dh)));
    p.wk.push_back(make(head + ".wk", Shape{dh, dh}, glorot(dh, dh)));
    p.wv.push_back(make(head + ".wv", Shape{dh, dh}, glorot(dh, dh)));
  }
  p.wo = make("enh.wo", Shape{cfg.m_e * dh, dh}, glorot(cfg.m_e * dh, dh));
  p.out = make_mlp<T>(make, "enh.out", dh, dh, 1);
  return p;
}

/// Sinusoidal encoding: PE[t, 2i] = sin(t / 10000^(2i/D)), PE[t, 2i+1] = cos(same), t from 0.
inline Tensor positional_encoding(std::size_t T, std::size_t D) {
  Tensor pe(Shape{T, D});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < D; ++j) {
      const double expo = static_cast<double>(j - j % 2) / static_cast<double>(D);
      const double angle = static_cast<double>(t) / std::pow(10000.0, expo);
      pe.at(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

/// Video-level score p_e from the second-layer trajectory [T x d_h]; returns a [1] tensor.
inline Var enhancement_head(Var hidden2, const EnhWeights<Var>& p) {
  using namespace diff;
  const Shape& s = hidden2.value().shape();
  if (s.rank() != 2 || s[1] != p.wo.value().shape()[1])
    throw DimensionError("enhancement_head: trajectory " + s.str());
  const std::size_t T = s[0], dh = s[1];
  const Var x = add(hidden2, hidden2.tape()->constant(positional_encoding(T, dh)));
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Var mixed;
  for (std::size_t j = 0; j < p.wq.size(); ++j) {
    const Var q = matmul(x, p.wq[j]);
    const Var k = matmul(x, p.wk[j]);
    const Var v = matmul(x, p.wv[j]);
    const Var head = matmul(softmax(scale(matmul_nt(q, k), inv), 1), v);
    // [head_1 | ... | head_m] W_o, one row block of W_o per head
    const Var part = matmul(head, slice(p.wo, j * dh, dh));
    mixed = mixed.valid() ? add(mixed, part) : part;
  }
  return sigmoid(mlp(p.out, mean_axis(mixed, 0)));
}

/// exp(-max((tau - t) / fps, 0) / 2) for 1-based frame t.
inline double penalty_factor(std::size_t t, std::uint32_t tau, double fps) {
  const double lead = (static_cast<double>(tau) - static_cast<double>(t)) / fps;
  return std::exp(-0.5 * std::max(lead, 0.0));
}

/// Unaveraged anticipation term of one video for scores p [T].
inline Var anticipation_term(Var p, const data::VideoSample& v) {
  using namespace diff;
  const std::size_t T = p.value().numel();
  if (T != v.frame_count())
    throw DimensionError("anticipation_term: " + std::to_string(T) + " scores for " +
                         std::to_string(v.frame_count()) + " frames");
  const Var pc = clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (v.label == 1) {
    Tensor wt(Shape{T});
    for (std::size_t t = 0; t < T; ++t) wt[t] = -penalty_factor(t + 1, v.tau, v.fps);
    return sum(mul(log(pc), p.tape()->constant(std::move(wt))));
  }
  return neg(sum(log(one_minus(pc))));
}

/// Unaveraged enhancement term of one video.
inline Var enhancement_term(Var p_e, int label) {
  using namespace diff;
  const Var pc = clamp(p_e, kProbClamp, 1.0 - kProbClamp);
  return neg(sum(label == 1 ? log(pc) : log(one_minus(pc))));
}

inline void require_batch(std::size_t a, std::size_t b, const char* where) {
  if (a == 0 || a != b) throw PreconditionError(std::string(where) + ": batch size mismatch or empty");
}

/// L_a averaged over the batch.
inline Var anticipation_loss(std::span<const Var> traces, std::span<const data::VideoSample> samples) {
  require_batch(traces.size(), samples.size(), "anticipation_loss");
  Var acc;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Var term = anticipation_term(traces[i], samples[i]);
    acc = acc.valid() ? diff::add(acc, term) : term;
  }
  return diff::scale(acc, 1.0 / static_cast<double>(traces.size()));
}

/// L_e averaged over the batch.
inline Var enhancement_loss(std::span<const Var> scores, std::span<const int> labels) {
  require_batch(scores.size(), labels.size(), "enhancement_loss");
  Var acc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Var term = enhancement_term(scores[i], labels[i]);
    acc = acc.valid() ? diff::add(acc, term) : term;
  }
  return diff::scale(acc, 1.0 / static_cast<double>(scores.size()));
}

/// mu1 / (2 rho1^2) L_a + mu2 / (2 rho2^2) L_e + log(rho1 rho2), with rho = exp(log_rho).
/// Without L_e only the first pair of terms remains.
inline Var total_loss(Var la, std::optional<Var> le, Var log_rho1, std::optional<Var> log_rho2,
                      double mu1, double mu2) {
  using namespace diff;
  Var out = add(mul(scale(exp(scale(log_rho1, -2.0)), 0.5 * mu1), reshape(la, Shape{})), log_rho1);
  if (le) {
    if (!log_rho2) throw PreconditionError("total_loss: L_e given without rho2");
    out = add(out, add(mul(scale(exp(scale(*log_rho2, -2.0)), 0.5 * mu2), reshape(*le, Shape{})),
                       *log_rho2));
  }
  return out;
}

}  // namespace crash::model
