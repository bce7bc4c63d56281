#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "crash/data/synthetic.hpp"
#include "crash/diff/gradcheck.hpp"
#include "crash/model/model.hpp"

namespace crash::train {

/// Synthetic-data settings whose dimensions match `cfg`.
inline data::SynthConfig synth_config_for(const model::ModelConfig& cfg, std::size_t frames = 0) {
  data::SynthConfig sc;
  sc.frames = frames ? frames : cfg.frames;
  sc.objects = cfg.n;
  sc.dim = cfg.d();
  sc.fps = cfg.fps;
  return sc;
}

struct ModuleCheck {
  std::string module;  // parameter-name prefix
  std::size_t tensors = 0;
  double max_rel_error = 0.0;
};

struct GradSuiteResult {
  std::vector<ModuleCheck> modules;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  double seconds = 0.0;
};

/// Central-difference check of the full training loss of one positive synthetic
/// video of `frames` frames, over every parameter tensor of a model drawn from `seed`.
inline GradSuiteResult model_gradcheck(const model::ModelConfig& cfg, std::size_t frames, std::uint64_t seed,
                                       const diff::GradCheckOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  const model::ParamStore store = model::init_params(cfg, seed);
  const auto videos = data::gen_synthetic(1, 1.0, synth_config_for(cfg, frames), seed);
  const data::VideoSample& v = videos.front();
  auto f = [&](diff::Tape& tape, std::span<const diff::Var> leaves) {
    model::LeafLookup look(store, leaves);
    return model::video_objective(tape, v, model::make_weights<diff::Var>(look, cfg), cfg, 1).loss;
  };
  const diff::GradCheckResult r = diff::grad_check(f, store.values(), opt);

  GradSuiteResult out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.names()[i];
    const std::string prefix = name.substr(0, name.find('.'));
    if (out.modules.empty() || out.modules.back().module != prefix) out.modules.push_back({prefix, 0, 0.0});
    out.modules.back().tensors += 1;
    out.modules.back().max_rel_error = std::max(out.modules.back().max_rel_error, r.per_tensor[i]);
  }
  out.max_rel_error = r.max_rel_error;
  out.coords_checked = r.coords_checked;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace crash::train
