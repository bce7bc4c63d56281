#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "crash/diff/tensor.hpp"
#include "crash/error.hpp"

namespace crash::data {

using diff::Shape;
using diff::Tensor;

/// Features for one frame.
struct FrameFeatures {
  Tensor objects;  // [n x d]
  Tensor context;  // [d]
  bool observed = true;
};

/// One labeled video. `tau` is the 1-based accident frame, 0 for negatives.
struct VideoSample {
  std::string id;
  double fps = 10.0;
  int label = 0;
  std::uint32_t tau = 0;
  std::vector<FrameFeatures> frames;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t objects() const { return frames.empty() ? 0 : frames[0].objects.shape()[0]; }
  std::size_t dim() const { return frames.empty() ? 0 : frames[0].context.numel(); }
};

/// Throws FormatError unless the sample satisfies the label/tau and shape invariants.
inline void validate(const VideoSample& v) {
  const std::string who = "video '" + v.id + "': ";
  if (v.frames.empty()) throw FormatError(who + "no frames");
  if (v.label != 0 && v.label != 1) throw FormatError(who + "label must be 0 or 1");
  if (v.label == 1 && (v.tau < 1 || v.tau > v.frames.size()))
    throw FormatError(who + "positive video needs 1 <= tau <= T");
  if (v.label == 0 && v.tau != 0) throw FormatError(who + "negative video needs tau = 0");
  if (!(v.fps > 0.0)) throw FormatError(who + "fps must be positive");
  const std::size_t n = v.objects(), d = v.dim();
  for (const FrameFeatures& f : v.frames) {
    if (f.objects.rank() != 2 || f.objects.shape()[0] != n || f.objects.shape()[1] != d ||
        f.context.rank() != 1 || f.context.numel() != d)
      throw FormatError(who + "inconsistent frame dimensions");
    if (!f.observed) {
      for (double x : f.objects.data())
        if (x != 0.0) throw FormatError(who + "masked frame with non-zero object features");
      for (double x : f.context.data())
        if (x != 0.0) throw FormatError(who + "masked frame with non-zero context features");
    }
  }
}

inline std::size_t count_label(const std::vector<VideoSample>& v, int label) {
  std::size_t n = 0;
  for (const VideoSample& s : v) n += (s.label == label);
  return n;
}

}  // namespace crash::data
