#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "crash/data/synthetic.hpp"
#include "crash/data/video.hpp"
#include "crash/diff/gradcheck.hpp"
#include "crash/model/config.hpp"
#include "crash/model/params.hpp"

namespace testutil {

using crash::diff::Shape;
using crash::diff::Tensor;

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Overwrites every parameter with U(-a, a) so no test leans on the initializer.
inline void randomize(crash::model::ParamStore& s, std::uint64_t seed, double a = 0.8) {
  std::mt19937_64 rng(seed);
  for (Tensor& t : s.values()) t = random_tensor(t.shape(), rng, -a, a);
}

/// n=2, d=4 (2 x 2 grid), c=2, d_h=3: small enough for plain-loop oracles.
inline crash::model::ModelConfig tiny_config() {
  crash::model::ModelConfig c;
  c.n = 2;
  c.h = 2;
  c.w = 2;
  c.c = 2;
  c.kw = 3;
  c.d_h = 3;
  c.M = 3;
  c.k = 2;
  c.m = 2;
  c.m_e = 2;
  c.frames = 6;
  return c;
}

/// Random video with features in [-1, 1] matching cfg.
inline crash::data::VideoSample random_video(const crash::model::ModelConfig& cfg, std::size_t T,
                                             int label, std::uint32_t tau, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  crash::data::VideoSample v;
  v.id = "r" + std::to_string(seed);
  v.fps = cfg.fps;
  v.label = label;
  v.tau = tau;
  for (std::size_t t = 0; t < T; ++t)
    v.frames.push_back({random_tensor(Shape{cfg.n, cfg.d()}, rng), random_tensor(Shape{cfg.d()}, rng), true});
  return v;
}

/// Builds module weights from a store through `make_fn(maker)` and checks the
/// gradient of `objective(weights, tape)` with respect to every stored tensor.
template <class MakeFn, class Objective>
crash::diff::GradCheckResult check_store(const crash::model::ParamStore& store, MakeFn make_fn,
                                         Objective objective, const crash::diff::GradCheckOptions& opt = {}) {
  auto f = [&](crash::diff::Tape& tape, std::span<const crash::diff::Var> leaves) {
    crash::model::LeafLookup look(store, leaves);
    return objective(tape, make_fn(look));
  };
  return crash::diff::grad_check(f, store.values(), opt);
}

}  // namespace testutil
