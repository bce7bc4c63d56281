#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "crash/data/video.hpp"
#include "crash/diff/ops.hpp"
#include "crash/model/config.hpp"
#include "crash/model/ctxaware.hpp"
#include "crash/model/fusion.hpp"
#include "crash/model/lossmod.hpp"
#include "crash/model/objaware.hpp"
#include "crash/model/params.hpp"

namespace crash::model {

/// Every learnable tensor. Optional members vanish under the matching ablation.
template <class T>
struct ModelWeights {
  std::optional<OfaWeights<T>> ofa;
  CtxWeights<T> ctx;
  std::array<GruLayer<T>, 2> gru;
  std::optional<TfaWeights<T>> tfa;
  Mlp<T> pred;
  std::optional<EnhWeights<T>> enh;
  T log_rho1;
  std::optional<T> log_rho2;
};

template <class T, class Make>
ModelWeights<T> make_weights(Make& make, const ModelConfig& cfg) {
  cfg.validate();
  ModelWeights<T> p;
  if (cfg.ablation.ofa) p.ofa = make_ofa<T>(make, cfg);
  p.ctx = make_ctx<T>(make, cfg);
  p.gru[0] = make_gru_layer<T>(make, "gru.l1", 3 * cfg.d(), cfg.d_h);
  p.gru[1] = make_gru_layer<T>(make, "gru.l2", cfg.d_h, cfg.d_h);
  if (cfg.ablation.tfa) p.tfa = make_tfa<T>(make, cfg);
  p.pred = make_mlp<T>(make, "pred", cfg.d_h, cfg.d_h, 1);
  if (cfg.ablation.le) p.enh = make_enh<T>(make, cfg);
  p.log_rho1 = make("loss.log_rho1", Shape{}, constant(0.0));
  if (cfg.ablation.le) p.log_rho2 = make("loss.log_rho2", Shape{}, constant(0.0));
  return p;
}

inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  TensorMaker maker(store, seed);
  make_weights<Tensor>(maker, cfg);
  return store;
}

struct Bound {
  ModelWeights<Var> w;
  std::vector<Var> leaves;  // store order
};

inline Bound bind(Tape& tape, const ParamStore& store, const ModelConfig& cfg, bool trainable = true) {
  Binder binder(tape, store, trainable);
  Bound b{make_weights<Var>(binder, cfg), {}};
  b.leaves = binder.leaves();
  for (const Var& v : b.leaves)
    if (!v.valid()) throw FormatError("parameter set does not match the model configuration");
  return b;
}

struct ForwardOptions {
  CtxOptions ctx;
  bool keep_fused = false;  // record the TFA summaries per frame
};

/// Tape-level result of running the recurrence over one video.
struct ForwardResult {
  Var p;        // [T] accident probabilities
  Var hidden1;  // [T x d_h]
  Var hidden2;  // [T x d_h]
  std::vector<FusedHidden> fused;  // per frame when requested
};

inline ForwardResult model_forward(Tape& tape, const data::VideoSample& v,
                                   const ModelWeights<Var>& w, const ModelConfig& cfg,
                                   const ForwardOptions& opt = {}) {
  using namespace diff;
  if (v.objects() != cfg.n || v.dim() != cfg.d())
    throw DimensionError("model_forward: video '" + v.id + "' has n=" + std::to_string(v.objects()) +
                         ", d=" + std::to_string(v.dim()) + "; config expects n=" +
                         std::to_string(cfg.n) + ", d=" + std::to_string(cfg.d()));
  const std::size_t T = v.frame_count(), dh = cfg.d_h;
  const Var zero = tape.constant(Tensor(Shape{dh}));
  FusedHidden fused{zero, zero};
  Var h1 = zero, h2 = zero;
  std::vector<Var> hs1, hs2, probs;
  hs1.reserve(T);
  hs2.reserve(T);
  probs.reserve(T);
  ForwardResult res;
  for (std::size_t t = 0; t < T; ++t) {
    const data::FrameFeatures& f = v.frames[t];
    const Var objects = tape.constant(f.objects);
    const Var context = tape.constant(f.context);
    const Var objects_bar = w.ofa ? ofa_forward(objects, fused, *w.ofa) : objects;
    const Var context_bar = ctx_forward(context, w.ctx, cfg, opt.ctx);
    const Var x = fuse_inputs(context, context_bar, objects_bar);
    h1 = gru_step(x, h1, w.gru[0]);
    h2 = gru_step(h1, h2, w.gru[1]);
    hs1.push_back(h1);
    hs2.push_back(h2);
    probs.push_back(predict(w.pred, h2));
    if (t + 1 < T || opt.keep_fused) {
      const Var win1 = hidden_window(hs1, cfg.M, zero);
      const Var win2 = hidden_window(hs2, cfg.M, zero);
      if (w.tfa) {
        fused = {tfa_summary(win1, w.tfa->blocks[0], w.tfa->gamma[0]),
                 tfa_summary(win2, w.tfa->blocks[1], w.tfa->gamma[1])};
      } else {
        fused = {mean_axis(win1, 0), mean_axis(win2, 0)};
      }
      if (opt.keep_fused) res.fused.push_back(fused);
    }
  }
  res.p = concat(probs);
  res.hidden1 = stack(hs1);
  res.hidden2 = stack(hs2);
  return res;
}

/// Per-frame scores plus the video-level score when the enhancement head exists.
struct PredictionTrace {
  std::vector<double> p;
  std::optional<double> p_e;
};

struct VideoObjective {
  Var loss;  // this video's share of the batch loss
  Var la;    // unaveraged anticipation term
  std::optional<Var> le;
  PredictionTrace trace;
};

/// One video's contribution to the batch objective. Summing over a batch of size
/// `batch` reproduces total_loss(L_a, L_e, rho) with batch-averaged L_a and L_e.
inline VideoObjective video_objective(Tape& tape, const data::VideoSample& v,
                                      const ModelWeights<Var>& w, const ModelConfig& cfg,
                                      std::size_t batch, const ForwardOptions& opt = {}) {
  const ForwardResult fr = model_forward(tape, v, w, cfg, opt);
  VideoObjective o;
  o.la = anticipation_term(fr.p, v);
  const auto pv = fr.p.value().data();
  o.trace.p.assign(pv.begin(), pv.end());
  if (w.enh) {
    const Var pe = enhancement_head(fr.hidden2, *w.enh);
    o.trace.p_e = pe.value()[0];
    o.le = enhancement_term(pe, v.label);
  }
  o.loss = diff::scale(total_loss(o.la, o.le, w.log_rho1, w.log_rho2, cfg.mu1, cfg.mu2),
                       1.0 / static_cast<double>(batch));
  return o;
}

/// Inference only: per-frame scores and p_e.
inline PredictionTrace predict_video(const data::VideoSample& v, const ParamStore& store,
                                     const ModelConfig& cfg, const ForwardOptions& opt = {}) {
  Tape tape;
  const Bound b = bind(tape, store, cfg, false);
  const ForwardResult fr = model_forward(tape, v, b.w, cfg, opt);
  PredictionTrace tr;
  const auto pv = fr.p.value().data();
  tr.p.assign(pv.begin(), pv.end());
  if (b.w.enh) tr.p_e = enhancement_head(fr.hidden2, *b.w.enh).value()[0];
  return tr;
}

}  // namespace crash::model
