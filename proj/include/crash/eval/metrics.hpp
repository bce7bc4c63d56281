#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crash/data/video.hpp"
#include "crash/error.hpp"

namespace crash::eval {

/// Video-level confusion counts at one alarm threshold.
struct ThresholdStats {
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> precision;  // absent when nothing fired
  double recall = 0.0;
  std::optional<double> mean_tta;   // seconds, absent when tp == 0
};

namespace detail {

// Per-video view: running maximum of the scores, so the first frame reaching a
// threshold is a binary search.
struct VideoScores {
  std::vector<double> prefix_max;
  std::size_t horizon;  // frames eligible to fire: tau for positives, T for negatives
  int label;
  std::uint32_t tau;
  double fps;
};

inline std::vector<VideoScores> prepare(std::span<const std::vector<double>> traces,
                                        std::span<const data::VideoSample> samples) {
  if (samples.empty()) throw PreconditionError("metrics: empty sample set");
  if (traces.size() != samples.size())
    throw PreconditionError("metrics: traces and samples are not aligned");
  std::vector<VideoScores> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = traces[i];
    const auto& s = samples[i];
    if (p.size() != s.frame_count() || p.empty())
      throw PreconditionError("metrics: trace length differs from frame count for '" + s.id + "'");
    VideoScores v;
    v.label = s.label;
    v.tau = s.tau;
    v.fps = s.fps;
    v.horizon = s.label == 1 ? s.tau : p.size();
    v.prefix_max.resize(p.size());
    double m = p[0];
    for (std::size_t t = 0; t < p.size(); ++t) v.prefix_max[t] = m = std::max(m, p[t]);
    out.push_back(std::move(v));
  }
  return out;
}

// 1-based first frame within the horizon whose score reaches `thr`, or 0.
inline std::size_t first_firing(const VideoScores& v, double thr) {
  auto end = v.prefix_max.begin() + static_cast<std::ptrdiff_t>(v.horizon);
  auto it = std::lower_bound(v.prefix_max.begin(), end, thr);
  return it == end ? 0 : static_cast<std::size_t>(it - v.prefix_max.begin()) + 1;
}

inline ThresholdStats evaluate(const std::vector<VideoScores>& videos, double thr) {
  ThresholdStats s;
  s.threshold = thr;
  double tta_sum = 0.0;
  for (const VideoScores& v : videos) {
    const std::size_t fire = first_firing(v, thr);
    if (v.label == 1) {
      if (fire) {
        ++s.tp;
        tta_sum += (static_cast<double>(v.tau) - static_cast<double>(fire)) / v.fps;
      } else {
        ++s.fn;
      }
    } else {
      (fire ? s.fp : s.tn) += 1;
    }
  }
  if (s.tp + s.fp > 0) s.precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
  if (s.tp + s.fn > 0) s.recall = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
  if (s.tp > 0) s.mean_tta = tta_sum / static_cast<double>(s.tp);
  return s;
}

}  // namespace detail

/// Counts at alarm threshold `thr`: a positive fires only at frames t <= tau.
inline ThresholdStats eval_threshold(std::span<const std::vector<double>> traces,
                                     std::span<const data::VideoSample> samples, double thr) {
  return detail::evaluate(detail::prepare(traces, samples), thr);
}

/// One entry per distinct observed score, in ascending threshold order.
inline std::vector<ThresholdStats> threshold_sweep(std::span<const std::vector<double>> traces,
                                                   std::span<const data::VideoSample> samples) {
  const auto videos = detail::prepare(traces, samples);
  std::vector<double> thr;
  for (const auto& p : traces) thr.insert(thr.end(), p.begin(), p.end());
  std::sort(thr.begin(), thr.end());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  std::vector<ThresholdStats> sweep;
  sweep.reserve(thr.size());
  for (double t : thr) sweep.push_back(detail::evaluate(videos, t));
  return sweep;
}

/// Envelope-integral area under the PR curve of a sweep.
inline double average_precision(std::span<const ThresholdStats> sweep) {
  // Descending threshold gives non-decreasing recall.
  std::vector<const ThresholdStats*> pts;
  for (auto it = sweep.rbegin(); it != sweep.rend(); ++it)
    if (it->precision) pts.push_back(&*it);
  std::vector<double> env(pts.size());
  double run = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) env[i] = run = std::max(run, *pts[i]->precision);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i]->recall - prev) * env[i];
    prev = pts[i]->recall;
  }
  return ap;
}

/// Unweighted mean of mean_tta over entries with at least one TP.
inline std::optional<double> mtta(std::span<const ThresholdStats> sweep) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const ThresholdStats& s : sweep)
    if (s.tp > 0) {
      sum += *s.mean_tta;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

/// mean_tta at the largest threshold whose recall is at least 0.8.
inline std::optional<double> tta_at_r80(std::span<const ThresholdStats> sweep) {
  for (auto it = sweep.rbegin(); it != sweep.rend(); ++it)
    if (it->tp > 0 && 5 * it->tp >= 4 * (it->tp + it->fn)) return it->mean_tta;
  return std::nullopt;
}

struct MetricsReport {
  double ap = 0.0;
  std::optional<double> mtta;
  std::optional<double> tta_at_r80;
  std::vector<ThresholdStats> sweep;
  nlohmann::json config = nlohmann::json::object();
  std::string fingerprint;
  std::uint64_t seed = 0;
};

/// Full sweep plus AP, mTTA and TTA@R80. Needs both classes present.
inline MetricsReport make_report(std::span<const std::vector<double>> traces,
                                 std::span<const data::VideoSample> samples) {
  const std::size_t pos = std::count_if(samples.begin(), samples.end(),
                                        [](const data::VideoSample& s) { return s.label == 1; });
  if (pos == 0 || pos == samples.size())
    throw PreconditionError("average_precision: needs at least one positive and one negative video");
  MetricsReport r;
  r.sweep = threshold_sweep(traces, samples);
  r.ap = average_precision(r.sweep);
  r.mtta = mtta(r.sweep);
  r.tta_at_r80 = tta_at_r80(r.sweep);
  return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json sweep = nlohmann::json::array();
  for (const ThresholdStats& s : r.sweep)
    sweep.push_back({{"threshold", s.threshold},
                     {"tp", s.tp},
                     {"fp", s.fp},
                     {"fn", s.fn},
                     {"tn", s.tn},
                     {"precision", optional_json(s.precision)},
                     {"recall", s.recall},
                     {"mean_tta", optional_json(s.mean_tta)}});
  return {{"ap", r.ap},
          {"mtta", optional_json(r.mtta)},
          {"tta_at_r80", optional_json(r.tta_at_r80)},
          {"sweep", std::move(sweep)},
          {"config", r.config},
          {"fingerprint", r.fingerprint},
          {"seed", r.seed}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  auto opt = [](const nlohmann::json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  MetricsReport r;
  try {
    r.ap = j.at("ap").get<double>();
    r.mtta = opt(j.at("mtta"));
    r.tta_at_r80 = opt(j.at("tta_at_r80"));
    for (const auto& e : j.at("sweep")) {
      ThresholdStats s;
      s.threshold = e.at("threshold").get<double>();
      s.tp = e.at("tp").get<std::size_t>();
      s.fp = e.at("fp").get<std::size_t>();
      s.fn = e.at("fn").get<std::size_t>();
      s.tn = e.at("tn").get<std::size_t>();
      s.precision = opt(e.at("precision"));
      s.recall = e.at("recall").get<double>();
      s.mean_tta = opt(e.at("mean_tta"));
      r.sweep.push_back(s);
    }
    r.config = j.value("config", nlohmann::json::object());
    r.fingerprint = j.value("fingerprint", std::string());
    r.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics report: ") + e.what());
  }
  return r;
}

/// threshold,precision,recall,mean_tta with empty cells for absent values.
inline std::string pr_curve_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,precision,recall,mean_tta\n";
  for (const ThresholdStats& s : r.sweep) {
    os << s.threshold << ',';
    if (s.precision) os << *s.precision;
    os << ',' << s.recall << ',';
    if (s.mean_tta) os << *s.mean_tta;
    os << '\n';
  }
  return os.str();
}

}  // namespace crash::eval
