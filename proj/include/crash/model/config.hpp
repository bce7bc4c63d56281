#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crash/error.hpp"

namespace crash::model {

/// Components that can be switched off. Off removes the component's parameters.
struct Ablation {
  bool ofa = true;
  bool cab = true;
  bool fft = true;
  bool tfa = true;
  bool le = true;

  /// Parses a comma list such as "ofa,tfa" naming the components to disable.
  static Ablation disabling(const std::string& list) {
    Ablation a;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      if (item == "ofa") a.ofa = false;
      else if (item == "cab") a.cab = false;
      else if (item == "fft") a.fft = false;
      else if (item == "tfa") a.tfa = false;
      else if (item == "le") a.le = false;
      else throw PreconditionError("unknown ablation '" + item + "'");
    }
    return a;
  }

  std::string disabled_list() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
      if (on) return;
      if (!s.empty()) s += ',';
      s += name;
    };
    add(ofa, "ofa");
    add(cab, "cab");
    add(fft, "fft");
    add(tfa, "tfa");
    add(le, "le");
    return s;
  }

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

/// Model dimensions plus the data shape they expect.
struct ModelConfig {
  std::size_t n = 3;    // objects per frame
  std::size_t h = 4;    // context grid, d = h * w
  std::size_t w = 4;
  std::size_t c = 4;    // spectral channels
  std::size_t kw = 3;   // channel-expansion kernel width
  std::size_t d_h = 16; // GRU hidden width
  std::size_t M = 4;    // TFA window
  std::size_t k = 2;    // TFA layers
  std::size_t m = 2;    // TFA heads
  std::size_t m_e = 2;  // enhancement heads
  std::size_t frames = 24;
  double fps = 10.0;
  double mu1 = 1.0;
  double mu2 = 1.0;
  Ablation ablation;

  std::size_t d() const { return h * w; }

  void validate() const {
    for (std::size_t v : {n, h, w, c, kw, d_h, M, k, m, m_e, frames})
      if (v < 1) throw PreconditionError("ModelConfig: all dimensions must be >= 1");
    if (kw % 2 == 0) throw PreconditionError("ModelConfig: kw must be odd for same padding");
    if (!(fps > 0.0) || !(mu1 > 0.0) || !(mu2 > 0.0))
      throw PreconditionError("ModelConfig: fps, mu1 and mu2 must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline ModelConfig desk_preset() { return ModelConfig{}; }

inline ModelConfig paper_faithful_preset() {
  ModelConfig c;
  c.n = 19;
  c.h = 64;
  c.w = 64;
  c.d_h = 512;
  c.M = 8;
  c.k = 8;
  c.frames = 100;
  return c;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"n", c.n},         {"h", c.h},     {"w", c.w},     {"c", c.c},
          {"kw", c.kw},       {"d_h", c.d_h}, {"M", c.M},     {"k", c.k},
          {"m", c.m},         {"m_e", c.m_e}, {"frames", c.frames},
          {"fps", c.fps},     {"mu1", c.mu1}, {"mu2", c.mu2},
          {"ablate", c.ablation.disabled_list()}};
}

/// Missing keys keep the desk defaults.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n = j.value("n", c.n);
    c.h = j.value("h", c.h);
    c.w = j.value("w", c.w);
    c.c = j.value("c", c.c);
    c.kw = j.value("kw", c.kw);
    c.d_h = j.value("d_h", c.d_h);
    c.M = j.value("M", c.M);
    c.k = j.value("k", c.k);
    c.m = j.value("m", c.m);
    c.m_e = j.value("m_e", c.m_e);
    c.frames = j.value("frames", c.frames);
    c.fps = j.value("fps", c.fps);
    c.mu1 = j.value("mu1", c.mu1);
    c.mu2 = j.value("mu2", c.mu2);
    c.ablation = Ablation::disabling(j.value("ablate", std::string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

/// "desk", "paper-faithful", or a path to a JSON config file.
inline ModelConfig load_config(const std::string& preset_or_path) {
  if (preset_or_path == "desk") return desk_preset();
  if (preset_or_path == "paper-faithful") return paper_faithful_preset();
  std::ifstream in(preset_or_path);
  if (!in) throw FormatError("unknown preset or unreadable config '" + preset_or_path + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config parse error: ") + e.what());
  }
}

/// FNV-1a over the canonical JSON form, as 16 hex digits.
inline std::string fingerprint(const ModelConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t hsh = 1469598103934665603ull;
  for (unsigned char ch : s) {
    hsh ^= ch;
    hsh *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hsh));
  return buf;
}

}  // namespace crash::model
