#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "crash/data/video.hpp"
#include "crash/error.hpp"

namespace crash::data {

enum class MissingMode { kRandomRate, kPeriodic };

/// Which frames of a video go missing.
struct MissingSpec {
  MissingMode mode = MissingMode::kRandomRate;
  double rate = 0.0;            // random-rate mode: fraction of frames dropped
  int drop_per_window = 1;      // periodic mode: frames dropped per 5-frame window
  std::uint64_t seed = 0;

  static constexpr std::size_t kWindow = 5;

  void validate() const {
    if (mode == MissingMode::kRandomRate && !(rate >= 0.0 && rate <= 1.0))
      throw PreconditionError("MissingSpec: rate must lie in [0, 1]");
    if (mode == MissingMode::kPeriodic && drop_per_window != 1 && drop_per_window != 2)
      throw PreconditionError("MissingSpec: drop_per_window must be 1 or 2");
  }
};

/// Number of frames a spec masks in a T-frame video.
inline std::size_t expected_masked(const MissingSpec& spec, std::size_t T) {
  if (spec.mode == MissingMode::kRandomRate)
    return static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(T)));
  const std::size_t drop = static_cast<std::size_t>(spec.drop_per_window);
  const std::size_t full = T / MissingSpec::kWindow, tail = T % MissingSpec::kWindow;
  return full * drop + (tail * drop) / MissingSpec::kWindow;
}

/// Indices (0-based) of the frames to mask.
inline std::vector<std::size_t> missing_frames(const MissingSpec& spec, std::size_t T) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> chosen;
  if (spec.mode == MissingMode::kRandomRate) {
    std::vector<std::size_t> idx(T);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(expected_masked(spec, T));
    chosen = std::move(idx);
  } else {
    const std::size_t drop = static_cast<std::size_t>(spec.drop_per_window);
    for (std::size_t start = 0; start < T; start += MissingSpec::kWindow) {
      const std::size_t len = std::min(MissingSpec::kWindow, T - start);
      const std::size_t k = (len * drop) / MissingSpec::kWindow;
      std::vector<std::size_t> idx(len);
      std::iota(idx.begin(), idx.end(), start);
      std::shuffle(idx.begin(), idx.end(), rng);
      chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// Zero-fills and flags the masked frames; annotations are untouched.
inline VideoSample apply_missing(VideoSample sample, const MissingSpec& spec) {
  for (std::size_t t : missing_frames(spec, sample.frame_count())) {
    FrameFeatures& f = sample.frames[t];
    f.observed = false;
    f.objects.fill(0.0);
    f.context.fill(0.0);
  }
  return sample;
}

/// Applies `spec` to every video; video k uses a seed derived from (spec.seed, k).
inline std::vector<VideoSample> apply_missing_all(const std::vector<VideoSample>& samples,
                                                  const MissingSpec& spec) {
  std::vector<VideoSample> out;
  out.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    std::seed_seq sseq{static_cast<std::uint32_t>(spec.seed),
                       static_cast<std::uint32_t>(spec.seed >> 32), static_cast<std::uint32_t>(k),
                       0x6d697373u};
    std::uint32_t words[2];
    sseq.generate(words, words + 2);
    MissingSpec s = spec;
    s.seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    out.push_back(apply_missing(samples[k], s));
  }
  return out;
}

namespace detail {

// Splits indices by label, shuffled.
inline std::array<std::vector<std::size_t>, 2> by_label(const std::vector<VideoSample>& samples,
                                                        std::mt19937_64& rng) {
  std::array<std::vector<std::size_t>, 2> idx;
  for (std::size_t i = 0; i < samples.size(); ++i) idx[samples[i].label == 1].push_back(i);
  for (auto& v : idx) std::shuffle(v.begin(), v.end(), rng);
  return idx;
}

}  // namespace detail

/// Label-stratified random subset of size round(fraction * count), in shuffled order.
inline std::vector<VideoSample> subset(const std::vector<VideoSample>& samples, double fraction,
                                       std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw PreconditionError("subset: fraction must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  auto idx = detail::by_label(samples, rng);
  const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(samples.size())));
  std::size_t pos = std::min(
      idx[1].size(),
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx[1].size()))));
  std::size_t neg = total >= pos ? total - pos : 0;
  if (neg > idx[0].size()) {
    pos += neg - idx[0].size();
    neg = idx[0].size();
  }
  std::vector<std::size_t> pick(idx[1].begin(), idx[1].begin() + static_cast<std::ptrdiff_t>(pos));
  pick.insert(pick.end(), idx[0].begin(), idx[0].begin() + static_cast<std::ptrdiff_t>(neg));
  if (pick.empty()) throw PreconditionError("subset: resulting subset is empty");
  std::shuffle(pick.begin(), pick.end(), rng);
  std::vector<VideoSample> out;
  out.reserve(pick.size());
  for (std::size_t i : pick) out.push_back(samples[i]);
  return out;
}

struct Split {
  std::vector<VideoSample> train;
  std::vector<VideoSample> validation;
};

/// Seeded label-stratified split; `validation_fraction` of each class goes to validation.
/// Both parts keep the input order.
inline Split stratified_split(const std::vector<VideoSample>& samples, double validation_fraction,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto idx = detail::by_label(samples, rng);
  std::vector<bool> in_val(samples.size(), false);
  for (const auto& cls : idx) {
    const auto k = static_cast<std::size_t>(
        std::llround(validation_fraction * static_cast<double>(cls.size())));
    for (std::size_t i = 0; i < k; ++i) in_val[cls[i]] = true;
  }
  Split s;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (in_val[i] ? s.validation : s.train).push_back(samples[i]);
  return s;
}

}  // namespace crash::data
