#include <gtest/gtest.h>

#include <random>

#include "testing.hpp"
#include "wednet/memory.hpp"

using namespace wednet;
using wednet::testing::grad_check;
using wednet::testing::make_param;
using wednet::testing::probe;
using wednet::testing::random_mat;
using Tape = ad::Tape<double>;

TEST(Memory, SingleSlotIsReturnedForEveryToken) {
  ParameterStore<double> store(1);
  MemoryBank<double> mem(store, "m", 5, 1);
  std::mt19937_64 rng(1);
  Tape t;
  const auto r = mem.query(t, t.constant(random_mat(7, 5, rng, -3, 3)));
  EXPECT_EQ(r.weights.value(), Mat<double>::Ones(7, 1));
  for (Eigen::Index i = 0; i < 7; ++i) EXPECT_EQ(r.retrieved.value().row(i), mem.slots().value.row(0));
}

TEST(Memory, WeightsAreRowStochastic) {
  ParameterStore<double> store(2);
  MemoryBank<double> mem(store, "m", 6, 16);
  std::mt19937_64 rng(2);
  Tape t;
  const auto w = mem.query(t, t.constant(random_mat(10, 6, rng, -4, 4))).weights.value();
  EXPECT_EQ(w.cols(), 16);
  EXPECT_GE(w.minCoeff(), 0.0);
  for (Eigen::Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-12);
}

TEST(Memory, AlignedQueryRetrievesItsSlot) {
  // Orthonormal slots, identity query map: a token equal to 100 * slot k puts
  // essentially all weight on slot k.
  const int W = 4;
  ParameterStore<double> store(3);
  MemoryBank<double> mem(store, "m", W, W);
  mem.slots().value = Mat<double>::Identity(W, W);
  mem.query_weight().value = Mat<double>::Identity(W, W);
  mem.query_bias().value.setZero();
  Tape t;
  const auto r = mem.query(t, t.constant(100.0 * Mat<double>::Identity(W, W)));
  for (int k = 0; k < W; ++k) {
    EXPECT_GE(r.weights.value()(k, k), 1.0 - 1e-12);
    EXPECT_LT((r.retrieved.value().row(k) - mem.slots().value.row(k)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Memory, ZeroSlotsReduceToLayerNorm) {
  ParameterStore<double> store(4);
  MemoryBank<double> mem(store, "m", 5, 3);
  mem.slots().value.setZero();
  std::mt19937_64 rng(4);
  const auto h = random_mat(6, 5, rng, -2, 2);
  Tape t;
  const auto out = mem.augment(t, t.constant(h)).value();
  const auto ref = ad::layer_norm(t.constant(h), t.constant(Mat<double>::Ones(1, 5)), t.constant(Mat<double>::Zero(1, 5))).value();
  EXPECT_EQ(out, ref);
}

TEST(Memory, GradientsMatchFiniteDifferences) {
  ParameterStore<double> store(5);
  MemoryBank<double> mem(store, "m", 4, 3);
  std::mt19937_64 rng(5);
  auto h = make_param("h", random_mat(6, 4, rng));
  const auto w = random_mat(6, 4, rng);
  std::vector<Parameter<double>*> ps{&h};
  for (auto& p : store.all()) ps.push_back(&p);
  EXPECT_LT(grad_check(ps, [&](Tape& t) { return probe(t, mem.augment(t, t.parameter(h)), w); }), 1e-6);
}

TEST(Memory, RejectsBadShapes) {
  ParameterStore<double> store(6);
  EXPECT_THROW(MemoryBank<double>(store, "m0", 4, 0), ValidationError);
  MemoryBank<double> mem(store, "m", 4, 2);
  Tape t;
  EXPECT_THROW(mem.query(t, t.constant(Mat<double>::Ones(3, 5))), ValidationError);
}
