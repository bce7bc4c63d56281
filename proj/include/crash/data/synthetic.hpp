#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "crash/data/video.hpp"
#include "crash/error.hpp"

namespace crash::data {

/// Generator settings. `map_seed` fixes the latent-to-feature map so datasets
/// drawn with different sampling seeds share one feature space.
struct SynthConfig {
  std::size_t frames = 50;
  std::size_t objects = 3;
  std::size_t dim = 16;
  double fps = 10.0;
  double collision_radius = 0.05;
  double noise = 0.05;
  std::uint64_t map_seed = 0x5eed;
};

using Point = std::array<double, 2>;

/// A generated video plus the object trajectories that produced it.
struct SyntheticVideo {
  VideoSample sample;
  std::vector<std::vector<Point>> positions;  // [T][n]
};

inline double min_pairwise_distance(const std::vector<Point>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      best = std::min(best, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
  return best;
}

/// Distance from object i to its nearest neighbour.
inline double nearest_distance(const std::vector<Point>& pts, std::size_t i) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pts.size(); ++j)
    if (j != i) best = std::min(best, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
  return best;
}

namespace detail {

inline constexpr std::size_t kLatent = 5;  // x, y, vx, vy, nearest distance

// Smooth 2D path: start + velocity * (t-1) + amplitude * sin(omega t + phase), per axis.
struct Wander {
  Point start{}, velocity{}, amplitude{}, phase{};
  double omega = 0.0;

  Point at(double t) const {
    return {start[0] + velocity[0] * (t - 1) + amplitude[0] * std::sin(omega * t + phase[0]),
            start[1] + velocity[1] * (t - 1) + amplitude[1] * std::sin(omega * t + phase[1])};
  }
};

inline Wander random_wander(std::mt19937_64& rng, double max_speed, double max_amp, Point origin_lo,
                            Point origin_hi) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Wander w;
  for (int a = 0; a < 2; ++a) w.start[a] = origin_lo[a] + (origin_hi[a] - origin_lo[a]) * u01(rng);
  const double ang = 2.0 * std::numbers::pi * u01(rng);
  const double speed = max_speed * std::sqrt(u01(rng));
  w.velocity = {speed * std::cos(ang), speed * std::sin(ang)};
  for (int a = 0; a < 2; ++a) {
    w.amplitude[a] = max_amp * u01(rng);
    w.phase[a] = 2.0 * std::numbers::pi * u01(rng);
  }
  w.omega = 0.1 + 0.2 * u01(rng);
  return w;
}

inline Tensor feature_map(const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.map_seed);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(kLatent)));
  Tensor a(Shape{kLatent, cfg.dim});
  for (double& v : a.data()) v = g(rng);
  return a;
}

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Trajectories for one video. Returns false when the constraints were not met.
inline bool draw_trajectories(const SynthConfig& cfg, bool positive, std::uint32_t tau,
                              std::mt19937_64& rng, std::vector<std::vector<Point>>& pos) {
  const std::size_t T = cfg.frames, n = cfg.objects;
  const double R = cfg.collision_radius;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Wander drift = random_wander(rng, 0.004, 0.01, {0.0, 0.0}, {0.0, 0.0});
  std::vector<Wander> paths(n);
  for (Wander& w : paths) w = random_wander(rng, 0.012, 0.02, {0.0, 0.0}, {1.0, 1.0});

  // Designated pair in a positive video: straight-line relative motion that meets
  // at t_m, placed so the separation first drops below R at frame tau.
  const double speed = 0.02 + 0.02 * u01(rng);
  const double t_meet = tau + R / speed - 0.5;
  const Point meet{0.3 + 0.4 * u01(rng), 0.3 + 0.4 * u01(rng)};
  const double ang = 2.0 * std::numbers::pi * u01(rng);
  const Point dir{std::cos(ang), std::sin(ang)};
  std::vector<std::size_t> slots(n);
  for (std::size_t i = 0; i < n; ++i) slots[i] = i;
  std::shuffle(slots.begin(), slots.end(), rng);
  const std::size_t a = slots[0], b = n > 1 ? slots[1] : slots[0];

  pos.assign(T, std::vector<Point>(n));
  for (std::size_t t = 1; t <= T; ++t) {
    const double td = static_cast<double>(t);
    const Point dr = drift.at(td);
    for (std::size_t i = 0; i < n; ++i) {
      Point p = paths[i].at(td);
      if (positive && (i == a || i == b)) {
        const double half = 0.5 * speed * std::max(t_meet - td, 0.0);
        const double sgn = (i == a) ? 1.0 : -1.0;
        p = {meet[0] + sgn * half * dir[0], meet[1] + sgn * half * dir[1]};
      }
      pos[t - 1][i] = {p[0] + dr[0], p[1] + dr[1]};
    }
  }
  for (std::size_t t = 1; t <= T; ++t) {
    const double dmin = min_pairwise_distance(pos[t - 1]);
    if (!positive && dmin < R) return false;
    if (positive && t < tau && dmin < R) return false;
    if (positive && t == tau && !(dmin < R)) return false;
  }
  return true;
}

}  // namespace detail

/// Per-object standardized latent state [x, y, vx, vy, nearest distance] at frame index t.
inline std::array<double, detail::kLatent> latent_state(const std::vector<std::vector<Point>>& pos,
                                                        std::size_t t, std::size_t i) {
  const std::size_t T = pos.size();
  Point vel{0.0, 0.0};
  if (T > 1) {
    const std::size_t prev = t == 0 ? 0 : t - 1, next = t == 0 ? 1 : t;
    vel = {pos[next][i][0] - pos[prev][i][0], pos[next][i][1] - pos[prev][i][1]};
  }
  const double near = pos[t].size() > 1 ? nearest_distance(pos[t], i) : 0.3;
  return {(pos[t][i][0] - 0.5) / 0.3, (pos[t][i][1] - 0.5) / 0.3, vel[0] / 0.02, vel[1] / 0.02,
          (near - 0.3) / 0.2};
}

/// Simulated videos with planted collision signatures. Deterministic in `seed`.
inline std::vector<SyntheticVideo> gen_synthetic_with_latents(std::size_t count,
                                                              double positive_fraction,
                                                              const SynthConfig& cfg,
                                                              std::uint64_t seed) {
  if (count < 1) throw PreconditionError("gen_synthetic: count must be >= 1");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
    throw PreconditionError("gen_synthetic: positive_fraction must lie in [0, 1]");
  if (cfg.frames < 1 || cfg.objects < 1 || cfg.dim < 1 || !(cfg.fps > 0.0))
    throw PreconditionError("gen_synthetic: frames, objects, dim and fps must be positive");
  const std::size_t positives =
      static_cast<std::size_t>(std::llround(positive_fraction * static_cast<double>(count)));
  if (positives > 0 && cfg.objects < 2)
    throw PreconditionError("gen_synthetic: positive videos need at least two objects");

  std::mt19937_64 master(seed);
  std::vector<int> labels(count, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
  std::shuffle(labels.begin(), labels.end(), master);

  const Tensor map = detail::feature_map(cfg);
  const std::size_t T = cfg.frames, n = cfg.objects, d = cfg.dim;
  const auto tau_lo = static_cast<std::uint32_t>(std::ceil(0.6 * static_cast<double>(T)));
  const auto tau_hi =
      std::max(tau_lo, static_cast<std::uint32_t>(std::floor(0.9 * static_cast<double>(T))));

  std::vector<SyntheticVideo> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(sseq);
    SyntheticVideo sv;
    VideoSample& v = sv.sample;
    char id[32];
    std::snprintf(id, sizeof id, "v%05zu", k);
    v.id = id;
    v.fps = detail::to_f32(cfg.fps);
    v.label = labels[k];
    v.tau = 0;
    if (v.label == 1) v.tau = std::uniform_int_distribution<std::uint32_t>(tau_lo, tau_hi)(rng);

    bool ok = false;
    for (int attempt = 0; attempt < 10000 && !ok; ++attempt)
      ok = detail::draw_trajectories(cfg, v.label == 1, v.tau, rng, sv.positions);
    if (!ok)
      throw PreconditionError("gen_synthetic: could not satisfy collision constraints for " + v.id);

    std::normal_distribution<double> noise(0.0, cfg.noise);
    v.frames.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      FrameFeatures& f = v.frames[t];
      f.objects = Tensor(Shape{n, d});
      f.context = Tensor(Shape{d});
      std::vector<double> mean(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto z = latent_state(sv.positions, t, i);
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t l = 0; l < detail::kLatent; ++l) acc += z[l] * map.at(l, j);
          const double val = acc + noise(rng);
          f.objects.at(i, j) = detail::to_f32(val);
          mean[j] += val / static_cast<double>(n);
        }
      }
      for (std::size_t j = 0; j < d; ++j) f.context[j] = detail::to_f32(mean[j] + noise(rng));
    }
    out.push_back(std::move(sv));
  }
  return out;
}

inline std::vector<VideoSample> gen_synthetic(std::size_t count, double positive_fraction,
                                              const SynthConfig& cfg, std::uint64_t seed) {
  std::vector<VideoSample> out;
  for (SyntheticVideo& sv : gen_synthetic_with_latents(count, positive_fraction, cfg, seed))
    out.push_back(std::move(sv.sample));
  return out;
}

}  // namespace crash::data
