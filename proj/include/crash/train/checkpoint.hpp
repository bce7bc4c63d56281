#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "crash/binio.hpp"
#include "crash/data/io.hpp"
#include "crash/diff/adam.hpp"
#include "crash/error.hpp"
#include "crash/model/config.hpp"
#include "crash/model/params.hpp"

namespace crash::train {

inline constexpr std::uint32_t kCheckpointRecord = 2;

/// Reduce-on-plateau bookkeeping.
struct PlateauState {
  double best = 0.0;
  bool has_best = false;
  std::uint32_t bad_epochs = 0;

  friend bool operator==(const PlateauState&, const PlateauState&) = default;
};

/// Everything needed to resume training bit-exactly.
struct Checkpoint {
  model::ModelConfig config;
  model::ParamStore params;
  diff::AdamState adam;
  std::uint32_t epoch = 0;  // completed epochs
  PlateauState plateau;
  std::mt19937_64 rng;
  data::Provenance provenance;
};

namespace detail {

inline void write_tensor_data(binio::Writer& w, const diff::Tensor& t) {
  for (double v : t.data()) w.f64(v);
}

inline void read_tensor_data(binio::Reader& r, diff::Tensor& t) {
  for (double& v : t.data()) v = r.f64();
}

}  // namespace detail

/// "CRSH" | version u32 | record u32 = 2 | command str | seed u64 | config json str |
/// fingerprint str | epoch u32 | plateau (best f64, has_best u8, bad u32) |
/// tensor count u32 | per tensor (name u16 + bytes, rank u8, extents u32, f64 data) |
/// Adam (step u64, lr, beta1, beta2, eps f64, then m and v data per tensor) | rng state str
inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  binio::Writer w;
  w.bytes(std::string_view(data::kMagic, 4));
  w.u32(data::kFormatVersion);
  w.u32(kCheckpointRecord);
  w.str(c.provenance.command);
  w.u64(c.provenance.seed);
  w.str(model::to_json(c.config).dump());
  w.str(model::fingerprint(c.config));
  w.u32(c.epoch);
  w.f64(c.plateau.best);
  w.u8(c.plateau.has_best ? 1 : 0);
  w.u32(c.plateau.bad_epochs);
  const auto& names = c.params.names();
  const auto& values = c.params.values();
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (names[i].size() > 0xFFFF) throw FormatError("checkpoint: parameter name too long");
    w.u16(static_cast<std::uint16_t>(names[i].size()));
    w.bytes(names[i]);
    const diff::Shape& s = values[i].shape();
    w.u8(static_cast<std::uint8_t>(s.rank()));
    for (std::size_t a = 0; a < s.rank(); ++a) w.u32(static_cast<std::uint32_t>(s[a]));
    detail::write_tensor_data(w, values[i]);
  }
  if (c.adam.m.size() != values.size() || c.adam.v.size() != values.size())
    throw FormatError("checkpoint: optimizer state does not match parameters");
  w.u64(c.adam.step);
  w.f64(c.adam.lr);
  w.f64(c.adam.beta1);
  w.f64(c.adam.beta2);
  w.f64(c.adam.eps);
  for (std::size_t i = 0; i < values.size(); ++i) {
    detail::write_tensor_data(w, c.adam.m[i]);
    detail::write_tensor_data(w, c.adam.v[i]);
  }
  std::ostringstream rng;
  rng << c.rng;
  w.str(rng.str());
  return w.buffer();
}

inline Checkpoint decode_checkpoint(binio::Reader& r) {
  if (r.bytes(4) != std::string_view(data::kMagic, 4)) throw FormatError("checkpoint: bad magic");
  if (r.u32() != data::kFormatVersion) throw FormatError("checkpoint: unsupported version");
  if (r.u32() != kCheckpointRecord) throw FormatError("checkpoint: not a checkpoint record");
  Checkpoint c;
  c.provenance.command = r.str();
  c.provenance.seed = r.u64();
  try {
    c.config = model::config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config: ") + e.what());
  }
  if (r.str() != model::fingerprint(c.config)) throw FormatError("checkpoint: fingerprint mismatch");
  c.epoch = r.u32();
  c.plateau.best = r.f64();
  c.plateau.has_best = r.u8() != 0;
  c.plateau.bad_epochs = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u16());
    const std::uint8_t rank = r.u8();
    if (rank > diff::Shape::kMaxRank) throw FormatError("checkpoint: rank too large");
    diff::Shape s;
    for (std::uint8_t a = 0; a < rank; ++a) {
      const std::uint32_t e = r.u32();
      if (e == 0) throw FormatError("checkpoint: zero extent");
      s.push_back(e);
    }
    diff::Tensor t(s);
    detail::read_tensor_data(r, t);
    c.params.add(std::move(name), std::move(t));
  }
  c.adam.step = r.u64();
  c.adam.lr = r.f64();
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.eps = r.f64();
  for (const diff::Tensor& p : c.params.values()) {
    c.adam.m.emplace_back(p.shape());
    c.adam.v.emplace_back(p.shape());
    detail::read_tensor_data(r, c.adam.m.back());
    detail::read_tensor_data(r, c.adam.v.back());
  }
  std::istringstream rng(r.str());
  rng >> c.rng;
  if (!rng) throw FormatError("checkpoint: bad rng state");
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  binio::Writer w;
  const std::vector<char> bytes = encode_checkpoint(c);
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  binio::Reader r = binio::Reader::load(path);
  return decode_checkpoint(r);
}

}  // namespace crash::train
