#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "crash/data/missing.hpp"
#include "crash/data/video.hpp"
#include "crash/diff/adam.hpp"
#include "crash/eval/metrics.hpp"
#include "crash/model/model.hpp"
#include "crash/train/checkpoint.hpp"

namespace crash::train {

using diff::Tensor;
using diff::Var;

struct TrainConfig {
  model::ModelConfig model;
  std::size_t epochs = 80;
  std::size_t batch = 10;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  double plateau_factor = 0.5;
  std::uint32_t plateau_patience = 5;
  double plateau_threshold = 1e-4;  // relative improvement needed to reset patience
  std::size_t threads = 1;          // forward/backward workers per batch

  void validate() const {
    model.validate();
    if (epochs < 1 || batch < 1) throw PreconditionError("TrainConfig: epochs and batch must be >= 1");
    if (!(lr >= 0.0)) throw PreconditionError("TrainConfig: lr must be >= 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw PreconditionError("TrainConfig: validation_fraction must lie in [0, 1)");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;  // total loss on the validation split
  double val_la = 0.0;    // anticipation loss on the validation split
  double lr = 0.0;
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t salt) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), salt};
  std::uint32_t w[2];
  s.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

inline constexpr std::uint32_t kInitSalt = 0x696e6974u;
inline constexpr std::uint32_t kSplitSalt = 0x73706c74u;
inline constexpr std::uint32_t kShuffleSalt = 0x73687566u;

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < threads; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += threads) fn(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct VideoGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

inline VideoGrad video_gradient(const data::VideoSample& v, const model::ParamStore& store,
                                const model::ModelConfig& cfg, std::size_t batch) {
  diff::Tape tape;
  const model::Bound b = model::bind(tape, store, cfg);
  const model::VideoObjective o = model::video_objective(tape, v, b.w, cfg, batch);
  tape.backward(o.loss);
  VideoGrad g;
  g.loss = o.loss.value().item();
  g.grads.reserve(b.leaves.size());
  for (const Var& l : b.leaves) g.grads.push_back(tape.grad_or_zero(l));
  return g;
}

}  // namespace detail

struct Losses {
  double total = 0.0;
  double la = 0.0;
  double le = 0.0;
};

/// Batch-averaged losses over `samples` without building gradients.
inline Losses evaluate_loss(const model::ParamStore& store, const model::ModelConfig& cfg,
                            const std::vector<data::VideoSample>& samples, std::size_t threads = 1) {
  if (samples.empty()) return {};
  std::vector<Losses> per(samples.size());
  detail::parallel_for(samples.size(), threads, [&](std::size_t i) {
    diff::Tape tape;
    const model::Bound b = model::bind(tape, store, cfg, false);
    const auto o = model::video_objective(tape, samples[i], b.w, cfg, samples.size());
    per[i] = {o.loss.value().item(), o.la.value().item(), o.le ? o.le->value().item() : 0.0};
  });
  Losses out;
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (const Losses& l : per) {
    out.total += l.total;
    out.la += l.la * inv;
    out.le += l.le * inv;
  }
  return out;
}

/// Fresh training state: initial parameters, zeroed optimizer, seeded rng.
inline Checkpoint initial_checkpoint(const TrainConfig& tc, data::Provenance prov = {}) {
  tc.validate();
  Checkpoint c;
  c.config = tc.model;
  c.params = model::init_params(tc.model, detail::derive_seed(tc.seed, detail::kInitSalt));
  c.adam = diff::AdamState::for_params(c.params.values(), tc.lr);
  c.rng.seed(detail::derive_seed(tc.seed, detail::kShuffleSalt));
  c.provenance = std::move(prov);
  c.provenance.seed = tc.seed;
  return c;
}

using EpochCallback = std::function<void(const EpochLog&, const Checkpoint&)>;

/// Continues training from `state` up to tc.epochs. Deterministic in (state, data, tc).
inline std::vector<EpochLog> train_from(Checkpoint& state, const std::vector<data::VideoSample>& dataset,
                                        const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (!(state.config == tc.model)) throw PreconditionError("train: checkpoint config differs from TrainConfig");
  if (dataset.empty()) throw PreconditionError("train: empty dataset");
  if (data::count_label(dataset, 1) == 0 || data::count_label(dataset, 0) == 0)
    throw PreconditionError("train: dataset needs both positive and negative videos");
  for (const auto& v : dataset)
    if (v.objects() != tc.model.n || v.dim() != tc.model.d())
      throw DimensionError("train: video '" + v.id + "' does not match the configured n, d");

  const data::Split split =
      data::stratified_split(dataset, tc.validation_fraction, detail::derive_seed(tc.seed, detail::kSplitSalt));
  const auto& train_set = split.train;
  const auto& monitor = split.validation.empty() ? split.train : split.validation;

  std::vector<EpochLog> log;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = state.epoch + 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t bsz = std::min(tc.batch, order.size() - start);
      std::vector<detail::VideoGrad> per(bsz);
      detail::parallel_for(bsz, tc.threads, [&](std::size_t i) {
        per[i] = detail::video_gradient(train_set[order[start + i]], state.params, state.config, bsz);
      });
      std::vector<Tensor> grads = std::move(per[0].grads);
      double batch_loss = per[0].loss;
      for (std::size_t i = 1; i < bsz; ++i) {
        batch_loss += per[i].loss;
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t k = 0; k < grads[p].numel(); ++k) grads[p][k] += per[i].grads[p][k];
      }
      if (!std::isfinite(batch_loss))
        throw NumericalFault("train: non-finite loss at epoch " + std::to_string(epoch));
      diff::adam_step(state.params.values(), grads, state.adam);
      train_loss += batch_loss * static_cast<double>(bsz);
    }
    train_loss /= static_cast<double>(order.size());

    const Losses val = evaluate_loss(state.params, state.config, monitor, tc.threads);
    if (!std::isfinite(val.total)) throw NumericalFault("train: non-finite validation loss");
    PlateauState& pl = state.plateau;
    if (!pl.has_best || val.total < pl.best * (1.0 - tc.plateau_threshold)) {
      pl.best = val.total;
      pl.has_best = true;
      pl.bad_epochs = 0;
    } else if (++pl.bad_epochs > tc.plateau_patience) {
      state.adam.lr *= tc.plateau_factor;
      pl.bad_epochs = 0;
    }
    state.epoch = static_cast<std::uint32_t>(epoch);
    EpochLog e{epoch, train_loss, val.total, val.la, state.adam.lr};
    log.push_back(e);
    if (on_epoch) on_epoch(e, state);
  }
  return log;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

inline TrainResult train(const std::vector<data::VideoSample>& dataset, const TrainConfig& tc,
                         data::Provenance prov = {}, const EpochCallback& on_epoch = {}) {
  TrainResult r{initial_checkpoint(tc, std::move(prov)), {}};
  r.log = train_from(r.checkpoint, dataset, tc, on_epoch);
  return r;
}

/// Per-video predictions, optionally after masking frames.
inline std::vector<model::PredictionTrace> predict_all(const model::ParamStore& params,
                                                       const model::ModelConfig& cfg,
                                                       const std::vector<data::VideoSample>& samples,
                                                       std::size_t threads = 1) {
  std::vector<model::PredictionTrace> out(samples.size());
  detail::parallel_for(samples.size(), threads, [&](std::size_t i) {
    out[i] = model::predict_video(samples[i], params, cfg);
  });
  return out;
}

inline eval::MetricsReport evaluate(const model::ParamStore& params, const model::ModelConfig& cfg,
                                    const std::vector<data::VideoSample>& dataset,
                                    const std::optional<data::MissingSpec>& missing = std::nullopt,
                                    std::size_t threads = 1) {
  for (const auto& v : dataset)
    if (v.objects() != cfg.n || v.dim() != cfg.d())
      throw DimensionError("evaluate: video '" + v.id + "' does not match the configured n, d");
  const std::vector<data::VideoSample> samples =
      missing ? data::apply_missing_all(dataset, *missing) : dataset;
  const auto traces = predict_all(params, cfg, samples, threads);
  std::vector<std::vector<double>> scores;
  scores.reserve(traces.size());
  for (const auto& t : traces) scores.push_back(t.p);
  eval::MetricsReport r = eval::make_report(scores, samples);
  r.config = model::to_json(cfg);
  r.fingerprint = model::fingerprint(cfg);
  return r;
}

inline eval::MetricsReport evaluate(const Checkpoint& c, const std::vector<data::VideoSample>& dataset,
                                    const std::optional<data::MissingSpec>& missing = std::nullopt,
                                    std::size_t threads = 1) {
  eval::MetricsReport r = evaluate(c.params, c.config, dataset, missing, threads);
  r.seed = c.provenance.seed;
  return r;
}

}  // namespace crash::train
