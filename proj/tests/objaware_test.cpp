#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "crash/model/objaware.hpp"
#include "support/reference.hpp"
#include "support/util.hpp"

using namespace crash;
using namespace crash::model;
using diff::Tape;

namespace {

struct Fixture {
  ModelConfig cfg;
  ParamStore store;

  explicit Fixture(std::uint64_t seed, std::size_t n = 3) {
    cfg = testutil::tiny_config();
    cfg.n = n;
    TensorMaker maker(store, 1);
    make_ofa<Tensor>(maker, cfg);
    testutil::randomize(store, seed);
  }

  OfaResult run(Tape& tape, const Tensor& objects, const Tensor& h1, const Tensor& h2) const {
    Binder b(tape, store);
    const OfaWeights<Var> w = make_ofa<Var>(b, cfg);
    return ofa_attend(tape.constant(objects), {tape.constant(h1), tape.constant(h2)}, w);
  }
};

}  // namespace

TEST(Ofa, IdenticalRowsGiveUniformAttention) {
  Fixture fx(5);
  std::mt19937_64 rng(2);
  const Tensor row = testutil::random_tensor(Shape{fx.cfg.d()}, rng);
  Tensor objects(Shape{3, fx.cfg.d()});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < fx.cfg.d(); ++j) objects.at(i, j) = row[j];
  Tape tape;
  const OfaResult r = fx.run(tape, objects, testutil::random_tensor(Shape{3}, rng),
                             testutil::random_tensor(Shape{3}, rng));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.attention.value()[j], 1.0 / 3.0, 1e-12);
  // Each output row is then the value projection of the shared row.
  const ref::Vec v = ref::vm(ref::mlp(fx.store, "ofa.kv", ref::vec(row)), ref::mat(fx.store.at("ofa.wv")));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < fx.cfg.d(); ++j) EXPECT_NEAR(r.out.value().at(i, j), v[j], 1e-12);
}

TEST(Ofa, ZeroMixingWeightsAverageTheValues) {
  Fixture fx(6);
  fx.store.at("ofa.alpha")[0] = 0.0;
  fx.store.at("ofa.beta")[0] = 0.0;
  std::mt19937_64 rng(3);
  const Tensor objects = testutil::random_tensor(Shape{3, fx.cfg.d()}, rng);
  Tape tape;
  const OfaResult r = fx.run(tape, objects, testutil::random_tensor(Shape{3}, rng),
                             testutil::random_tensor(Shape{3}, rng));
  ref::Mat vals;
  for (std::size_t i = 0; i < 3; ++i) {
    const ref::Vec row(objects.data().begin() + i * fx.cfg.d(), objects.data().begin() + (i + 1) * fx.cfg.d());
    vals.push_back(ref::vm(ref::mlp(fx.store, "ofa.kv", row), ref::mat(fx.store.at("ofa.wv"))));
  }
  const ref::Vec mean = ref::col_mean(vals);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < fx.cfg.d(); ++j) EXPECT_NEAR(r.out.value().at(i, j), mean[j], 1e-12);
}

TEST(Ofa, MatchesPlainLoopOracle) {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    Fixture fx(seed, 2 + seed % 3);
    std::mt19937_64 rng(seed + 100);
    const Tensor objects = testutil::random_tensor(Shape{fx.cfg.n, fx.cfg.d()}, rng, -2, 2);
    const Tensor h1 = testutil::random_tensor(Shape{3}, rng), h2 = testutil::random_tensor(Shape{3}, rng);
    Tape tape;
    const OfaResult r = fx.run(tape, objects, h1, h2);
    ref::Mat attn;
    const ref::Mat want = ref::ofa(fx.store, ref::mat(objects), ref::vec(h1), ref::vec(h2), &attn);
    for (std::size_t i = 0; i < fx.cfg.n; ++i) {
      double rowsum = 0.0;
      for (std::size_t j = 0; j < fx.cfg.n; ++j) {
        EXPECT_NEAR(r.attention.value()[j], attn[i][j], 1e-12);
        rowsum += attn[i][j];
      }
      EXPECT_NEAR(rowsum, 1.0, 1e-12);
      for (std::size_t j = 0; j < fx.cfg.d(); ++j) EXPECT_NEAR(r.out.value().at(i, j), want[i][j], 1e-12);
    }
  }
}

TEST(Ofa, InvariantToObjectOrder) {
  Fixture fx(8, 4);
  std::mt19937_64 rng(9);
  const Tensor objects = testutil::random_tensor(Shape{4, fx.cfg.d()}, rng);
  const Tensor h1 = testutil::random_tensor(Shape{3}, rng), h2 = testutil::random_tensor(Shape{3}, rng);
  Tensor perm(objects.shape());
  const std::size_t order[] = {2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < fx.cfg.d(); ++j) perm.at(i, j) = objects.at(order[i], j);
  Tape t1, t2;
  const OfaResult a = fx.run(t1, objects, h1, h2), b = fx.run(t2, perm, h1, h2);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(b.attention.value()[i], a.attention.value()[order[i]], 1e-12);
  for (std::size_t k = 0; k < a.out.value().numel(); ++k)
    EXPECT_NEAR(a.out.value()[k], b.out.value()[k], 1e-12);
}

TEST(Ofa, RejectsMismatchedWidth) {
  Fixture fx(1);
  Tape tape;
  EXPECT_THROW(fx.run(tape, Tensor(Shape{3, 5}), Tensor(Shape{3}), Tensor(Shape{3})), DimensionError);
}

TEST(Ofa, GradientsPassCentralDifferences) {
  Fixture fx(11);
  std::mt19937_64 rng(12);
  const Tensor objects = testutil::random_tensor(Shape{3, fx.cfg.d()}, rng);
  const Tensor h1 = testutil::random_tensor(Shape{3}, rng), h2 = testutil::random_tensor(Shape{3}, rng);
  const Tensor probe = testutil::random_tensor(Shape{3, fx.cfg.d()}, rng);
  const auto res = testutil::check_store(
      fx.store, [&](LeafLookup& m) { return make_ofa<Var>(m, fx.cfg); },
      [&](Tape& tape, const OfaWeights<Var>& w) {
        const Var out = ofa_forward(tape.constant(objects), {tape.constant(h1), tape.constant(h2)}, w);
        return diff::sum(diff::mul(out, tape.constant(probe)));
      });
  EXPECT_LE(res.max_rel_error, 1e-6);
  EXPECT_EQ(res.coords_checked, fx.store.scalar_count());
}
