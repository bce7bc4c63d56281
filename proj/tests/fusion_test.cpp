#include <gtest/gtest.h>

#include <cmath>

#include "crash/model/model.hpp"
#include "support/reference.hpp"
#include "support/util.hpp"

using namespace crash;
using namespace crash::model;
using diff::Tape;

namespace {

ParamStore gru_store(std::size_t in, std::size_t dh, std::uint64_t seed) {
  ParamStore s;
  TensorMaker maker(s, 1);
  make_gru_layer<Tensor>(maker, "g", in, dh);
  testutil::randomize(s, seed);
  return s;
}

Tensor gru_eval(const ParamStore& s, const Tensor& x, const Tensor& h) {
  Tape tape;
  Binder b(tape, s);
  const auto g = make_gru_layer<Var>(b, "g", x.numel(), h.numel());
  return gru_step(tape.constant(x), tape.constant(h), g).value();
}

ParamStore tfa_store(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore s;
  TensorMaker maker(s, 1);
  make_tfa<Tensor>(maker, cfg);
  testutil::randomize(s, seed);
  return s;
}

TfaWeights<Var> bind_tfa(Tape& tape, const ParamStore& s, const ModelConfig& cfg) {
  Binder b(tape, s);
  return make_tfa<Var>(b, cfg);
}

ParamStore model_store(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore s = init_params(cfg, 1);
  testutil::randomize(s, seed, 0.6);
  return s;
}

}  // namespace

TEST(Gru, ZeroWeightsHalveTheState) {
  ParamStore s = gru_store(2, 3, 1);
  for (Tensor& t : s.values()) t = Tensor(t.shape());
  const Tensor out = gru_eval(s, Tensor::vector({1, -1}), Tensor::vector({0.4, -2, 0}));
  // z = 1/2 and the candidate is tanh(0) = 0
  EXPECT_DOUBLE_EQ(out[0], 0.2);
  EXPECT_DOUBLE_EQ(out[1], -1.0);
  EXPECT_DOUBLE_EQ(out[2], 0.0);
  const Tensor zero = gru_eval(s, Tensor::vector({3, 3}), Tensor(Shape{3}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gru, OneDimensionalHandCase) {
  ParamStore s = gru_store(1, 1, 1);
  s.at("g.w") = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  s.at("g.b") = Tensor::vector({0.1, 0.2, -0.3});
  s.at("g.u_zr") = Tensor::matrix(1, 2, {1.5, 0.5});
  s.at("g.u_h") = Tensor::matrix(1, 1, {-0.7});
  const double x = 0.8, h = -0.4;
  const double z = 1.0 / (1.0 + std::exp(-(0.5 * x + 0.1 + 1.5 * h)));
  const double r = 1.0 / (1.0 + std::exp(-(-1.0 * x + 0.2 + 0.5 * h)));
  const double cand = std::tanh(2.0 * x - 0.3 + -0.7 * (r * h));
  const Tensor out = gru_eval(s, Tensor::vector({x}), Tensor::vector({h}));
  EXPECT_NEAR(out[0], (1 - z) * h + z * cand, 1e-15);
}

TEST(Gru, MatchesLoopOracle) {
  for (std::uint64_t seed : {3, 4, 5}) {
    const ParamStore s = gru_store(5, 4, seed);
    std::mt19937_64 rng(seed);
    const Tensor x = testutil::random_tensor(Shape{5}, rng), h = testutil::random_tensor(Shape{4}, rng);
    const Tensor got = gru_eval(s, x, h);
    const ref::Vec want = ref::gru(s, "g", ref::vec(x), ref::vec(h));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], want[i], 1e-13);
  }
}

TEST(FuseInputs, ConcatenatesContextEnhancedContextAndObjectMean) {
  Tape tape;
  const Var out = fuse_inputs(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3, 4})),
                              tape.constant(Tensor::matrix(2, 2, {1, 10, 3, 20})));
  EXPECT_EQ(out.value(), Tensor::vector({1, 2, 3, 4, 2, 15}));
}

TEST(HiddenWindow, PadsWithZerosOnTheLeft) {
  Tape tape;
  const Var zero = tape.constant(Tensor(Shape{2}));
  std::vector<Var> states{tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3, 4}))};
  EXPECT_EQ(hidden_window(states, 3, zero).value(), Tensor::matrix(3, 2, {0, 0, 1, 2, 3, 4}));
  EXPECT_EQ(hidden_window(states, 1, zero).value(), Tensor::matrix(1, 2, {3, 4}));
}

TEST(Tfa, SingleStateWindowAttendsToItself) {
  ModelConfig cfg = testutil::tiny_config();
  cfg.M = 1;
  const ParamStore s = tfa_store(cfg, 7);
  Tape tape;
  const auto w = bind_tfa(tape, s, cfg);
  const Tensor h = Tensor::matrix(1, 3, {0.3, -0.6, 0.9});
  const Tensor r = tfa_attention(tape.constant(h), w.blocks[0][0]).value();
  ref::Vec want(3, 0.0);
  for (const char* head : {"tfa.b1.l1.h1", "tfa.b1.l1.h2"})
    want = ref::plus(want, ref::vm(ref::vec(h), ref::mat(s.at(std::string(head) + ".wv"))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r[i], want[i], 1e-14);
}

TEST(Tfa, IdenticalStatesGetUniformAttention) {
  ModelConfig cfg = testutil::tiny_config();
  const ParamStore s = tfa_store(cfg, 8);
  const Tensor h = Tensor::matrix(3, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3});
  ref::Mat attn;
  ref::tfa_block(s, "tfa.b1.l1", cfg.m, ref::mat(h), &attn);
  for (const auto& row : attn)
    for (double a : row) EXPECT_NEAR(a, 1.0 / 3.0, 1e-15);
  Tape tape;
  const auto w = bind_tfa(tape, s, cfg);
  const Tensor r = tfa_attention(tape.constant(h), w.blocks[0][0]).value();
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.at(i, j), r.at(0, j), 1e-14);
}

TEST(Tfa, BlockMatchesLoopOracleAndRefinementRowsSumToOne) {
  ModelConfig cfg = testutil::tiny_config();
  for (std::uint64_t seed : {9, 10, 11}) {
    const ParamStore s = tfa_store(cfg, seed);
    std::mt19937_64 rng(seed);
    const Tensor h = testutil::random_tensor(Shape{3, 3}, rng, -2, 2);
    Tape tape;
    const auto w = bind_tfa(tape, s, cfg);
    const Var hv = tape.constant(h);
    const Tensor got = tfa_block(hv, w.blocks[1][1]).value();
    const Tensor r = tfa_attention(hv, w.blocks[1][1]).value();
    const ref::Mat want = ref::tfa_block(s, "tfa.b2.l2", cfg.m, ref::mat(h));
    for (std::size_t i = 0; i < 3; ++i) {
      double extra = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(got.at(i, j), want[i][j], 1e-13);
        EXPECT_GT(got.at(i, j) - r.at(i, j), 0.0);
        extra += got.at(i, j) - r.at(i, j);
      }
      EXPECT_NEAR(extra, 1.0, 1e-13);
    }
  }
}

TEST(Tfa, AggregateWeightsTheLayerOutputs) {
  Tape tape;
  const Var a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Var b = tape.constant(Tensor::matrix(2, 2, {-1, 0, 5, 8}));
  const Var one[] = {a};
  EXPECT_EQ(tfa_aggregate(one, tape.constant(Tensor::vector({1.0}))).value(), Tensor::vector({2, 3}));
  const Var two[] = {a, b};
  EXPECT_EQ(tfa_aggregate(two, tape.constant(Tensor::vector({0.0, 0.0}))).value(), Tensor::vector({0, 0}));
  // 0.25 * [2, 3] + 0.75 * [2, 4]
  const Tensor mixed = tfa_aggregate(two, tape.constant(Tensor::vector({0.25, 0.75}))).value();
  EXPECT_DOUBLE_EQ(mixed[0], 2.0);
  EXPECT_DOUBLE_EQ(mixed[1], 3.75);
  EXPECT_THROW(tfa_aggregate(two, tape.constant(Tensor::vector({1.0}))), DimensionError);
}

TEST(ModelForward, MatchesMonolithicLoopOracle) {
  const char* ablations[] = {"", "ofa", "tfa", "cab", "fft", "le", "ofa,tfa,fft"};
  for (const char* ab : ablations)
    for (std::uint64_t seed : {71, 72}) {
      ModelConfig cfg = testutil::tiny_config();
      cfg.ablation = Ablation::disabling(ab);
      const ParamStore s = model_store(cfg, seed);
      const auto v = testutil::random_video(cfg, 6, 1, 4, seed);
      Tape tape;
      const Bound b = bind(tape, s, cfg);
      const ForwardResult fr = model_forward(tape, v, b.w, cfg);
      const ref::ModelTrace want = ref::model(s, cfg, v);
      ASSERT_EQ(fr.p.value().numel(), 6u);
      for (std::size_t t = 0; t < 6; ++t) {
        EXPECT_NEAR(fr.p.value()[t], want.p[t], 1e-9) << "ablation '" << ab << "' t=" << t;
        EXPECT_GT(fr.p.value()[t], 0.0);
        EXPECT_LT(fr.p.value()[t], 1.0);
      }
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t j = 0; j < cfg.d_h; ++j) EXPECT_NEAR(fr.hidden2.value().at(t, j), want.hidden2[t][j], 1e-9);
    }
}

TEST(ModelForward, DeterministicAndRejectsWrongShapes) {
  const ModelConfig cfg = testutil::tiny_config();
  const ParamStore s = model_store(cfg, 3);
  const auto v = testutil::random_video(cfg, 5, 0, 0, 3);
  EXPECT_EQ(predict_video(v, s, cfg).p, predict_video(v, s, cfg).p);
  ModelConfig other = cfg;
  other.n = 3;
  const auto bad = testutil::random_video(other, 5, 0, 0, 3);
  Tape tape;
  const Bound b = bind(tape, s, cfg);
  EXPECT_THROW(model_forward(tape, bad, b.w, cfg), DimensionError);
}

TEST(ModelForward, GradientsPassCentralDifferences) {
  ModelConfig cfg = testutil::tiny_config();
  const ParamStore s = model_store(cfg, 81);
  const auto v = testutil::random_video(cfg, 4, 1, 3, 81);
  const auto res = testutil::check_store(
      s, [&](LeafLookup& m) { return make_weights<Var>(m, cfg); },
      [&](Tape& tape, const ModelWeights<Var>& w) { return video_objective(tape, v, w, cfg, 2).loss; });
  EXPECT_LE(res.max_rel_error, 1e-6);
  EXPECT_EQ(res.coords_checked, s.scalar_count());
}
