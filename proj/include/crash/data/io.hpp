#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crash/binio.hpp"
#include "crash/data/video.hpp"
#include "crash/error.hpp"

namespace crash::data {

inline constexpr char kMagic[] = "CRSH";
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

/// Command line and seed embedded in every artifact.
struct Provenance {
  std::string command;
  std::uint64_t seed = 0;
};

/// Feature file layout (little-endian):
///   "CRSH" | version u32 | T u32 | n u32 | d u32 | fps f32 | label u8 | tau u32 |
///   T x ( observed u8 | n*d f32 objects row-major | d f32 context )
inline std::vector<char> encode_video(const VideoSample& v) {
  validate(v);
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(v.frame_count()));
  w.u32(static_cast<std::uint32_t>(v.objects()));
  w.u32(static_cast<std::uint32_t>(v.dim()));
  w.f32(static_cast<float>(v.fps));
  w.u8(static_cast<std::uint8_t>(v.label));
  w.u32(v.tau);
  for (const FrameFeatures& f : v.frames) {
    w.u8(f.observed ? 1 : 0);
    for (double x : f.objects.data()) w.f32(static_cast<float>(x));
    for (double x : f.context.data()) w.f32(static_cast<float>(x));
  }
  return w.buffer();
}

inline VideoSample decode_video(binio::Reader& r, std::string id) {
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw FormatError("bad magic in '" + id + "'");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw FormatError("unsupported feature file version " + std::to_string(version));
  VideoSample v;
  v.id = std::move(id);
  const std::uint32_t T = r.u32(), n = r.u32(), d = r.u32();
  if (T == 0 || n == 0 || d == 0) throw FormatError("zero extent in '" + v.id + "'");
  v.fps = r.f32();
  v.label = r.u8();
  v.tau = r.u32();
  v.frames.reserve(T);
  for (std::uint32_t t = 0; t < T; ++t) {
    FrameFeatures f;
    f.observed = r.u8() != 0;
    f.objects = Tensor(Shape{n, d});
    for (double& x : f.objects.data()) x = r.f32();
    f.context = Tensor(Shape{d});
    for (double& x : f.context.data()) x = r.f32();
    v.frames.push_back(std::move(f));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in '" + v.id + "'");
  validate(v);
  return v;
}

inline std::string video_file_name(const VideoSample& v) { return v.id + ".crsh"; }

/// Writes `dir/manifest.json` and one feature file per video.
inline void write_dataset(const std::vector<VideoSample>& samples, const std::filesystem::path& dir,
                          const Provenance& prov = {}) {
  if (samples.empty()) throw PreconditionError("write_dataset: empty sample list");
  const std::size_t n = samples[0].objects(), d = samples[0].dim();
  std::set<std::string> ids;
  for (const VideoSample& v : samples) {
    if (v.objects() != n || v.dim() != d)
      throw FormatError("write_dataset: heterogeneous dimensions in '" + v.id + "'");
    if (!ids.insert(v.id).second) throw FormatError("write_dataset: duplicate id '" + v.id + "'");
  }
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "crsh-manifest";
  manifest["version"] = kFormatVersion;
  manifest["command"] = prov.command;
  manifest["seed"] = prov.seed;
  nlohmann::json videos = nlohmann::json::array();
  for (const VideoSample& v : samples) {
    const std::vector<char> bytes = encode_video(v);
    binio::Writer w;
    w.bytes(std::string_view(bytes.data(), bytes.size()));
    w.save((dir / video_file_name(v)).string());
    videos.push_back({{"id", v.id},
                      {"file", video_file_name(v)},
                      {"T", v.frame_count()},
                      {"n", n},
                      {"d", d},
                      {"fps", static_cast<float>(v.fps)},
                      {"label", v.label},
                      {"tau", v.tau}});
  }
  manifest["videos"] = std::move(videos);
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

struct Dataset {
  std::vector<VideoSample> samples;
  Provenance provenance;
};

/// Reads a dataset from its directory (or the manifest path itself).
inline Dataset read_dataset(const std::filesystem::path& where) {
  const std::filesystem::path manifest_path =
      std::filesystem::is_directory(where) ? where / kManifestName : where;
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest '" + manifest_path.string() + "'");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest parse error: ") + e.what());
  }
  Dataset ds;
  try {
    ds.provenance.command = m.value("command", "");
    ds.provenance.seed = m.value("seed", std::uint64_t{0});
    for (const auto& e : m.at("videos")) {
      auto r = binio::Reader::load((manifest_path.parent_path() / e.at("file").get<std::string>()).string());
      VideoSample v = decode_video(r, e.at("id").get<std::string>());
      if (v.frame_count() != e.at("T").get<std::size_t>() || v.objects() != e.at("n").get<std::size_t>() ||
          v.dim() != e.at("d").get<std::size_t>() || v.label != e.at("label").get<int>() ||
          v.tau != e.at("tau").get<std::uint32_t>())
        throw FormatError("manifest disagrees with feature file for '" + v.id + "'");
      ds.samples.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest schema error: ") + e.what());
  }
  if (ds.samples.empty()) throw FormatError("dataset has no videos");
  return ds;
}

}  // namespace crash::data
