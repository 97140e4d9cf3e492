#include <gtest/gtest.h>

#include <random>

#include "testing.hpp"
#include "wednet/attention.hpp"

using namespace wednet;
using wednet::testing::grad_check;
using wednet::testing::make_param;
using wednet::testing::probe;
using wednet::testing::random_mat;
using Tape = ad::Tape<double>;

namespace {

// Straightforward per-token loop: for every query token, softmax over the tokens
// sharing its group, computed head by head.
Mat<double> naive_attention(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v, int heads, int B, int T, int N, AttentionAxis axis) {
  const int hd = static_cast<int>(q.cols()) / heads;
  Mat<double> out = Mat<double>::Zero(q.rows(), q.cols());
  auto row = [&](int b, int t, int n) { return (b * T + t) * N + n; };
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n) {
        const int qi = row(b, t, n);
        std::vector<int> keys;
        if (axis == AttentionAxis::temporal) {
          for (int s = 0; s < T; ++s) keys.push_back(row(b, s, n));
        } else {
          for (int m = 0; m < N; ++m) keys.push_back(row(b, t, m));
        }
        for (int h = 0; h < heads; ++h) {
          std::vector<double> logit;
          double mx = -1e300;
          for (int kj : keys) {
            double d = 0;
            for (int c = 0; c < hd; ++c) d += q(qi, h * hd + c) * k(kj, h * hd + c);
            logit.push_back(d / std::sqrt(static_cast<double>(hd)));
            mx = std::max(mx, logit.back());
          }
          double z = 0;
          for (auto& l : logit) z += (l = std::exp(l - mx));
          for (std::size_t j = 0; j < keys.size(); ++j)
            for (int c = 0; c < hd; ++c) out(qi, h * hd + c) += logit[j] / z * v(keys[j], h * hd + c);
        }
      }
  return out;
}

}  // namespace

TEST(Attention, MatchesNaiveOracle) {
  std::mt19937_64 rng(1);
  for (auto axis : {AttentionAxis::temporal, AttentionAxis::spatial})
    for (int heads : {1, 2, 4}) {
      const int B = 2, T = 3, N = 4, W = 8;
      const auto q = random_mat(B * T * N, W, rng, -2, 2), k = random_mat(B * T * N, W, rng, -2, 2), v = random_mat(B * T * N, W, rng);
      Tape t;
      const auto res = ad::attention(t.constant(q), t.constant(k), t.constant(v), heads, {B, T, N, axis});
      const auto ref = naive_attention(q, k, v, heads, B, T, N, axis);
      EXPECT_LT((res.out.value() - ref).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Attention, ProbabilitiesAreRowStochastic) {
  std::mt19937_64 rng(2);
  Tape t;
  const int rows = 2 * 5 * 3;
  const auto res = ad::attention(t.constant(random_mat(rows, 6, rng, -4, 4)), t.constant(random_mat(rows, 6, rng, -4, 4)), t.constant(random_mat(rows, 6, rng)), 3,
                                 {2, 5, 3, AttentionAxis::temporal});
  const auto& p = *res.probs;
  EXPECT_EQ(p.groups, 6);
  EXPECT_EQ(p.length, 5);
  for (int g = 0; g < p.groups; ++g)
    for (int h = 0; h < p.heads; ++h)
      for (int i = 0; i < p.length; ++i) {
        double s = 0;
        for (int j = 0; j < p.length; ++j) {
          EXPECT_GE(p.at(g, h, i, j), 0.0);
          s += p.at(g, h, i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (auto axis : {AttentionAxis::temporal, AttentionAxis::spatial}) {
    const int B = 2, T = 3, N = 2, W = 4;
    auto q = make_param("q", random_mat(B * T * N, W, rng)), k = make_param("k", random_mat(B * T * N, W, rng)),
         v = make_param("v", random_mat(B * T * N, W, rng));
    const auto w = random_mat(B * T * N, W, rng);
    EXPECT_LT(grad_check({&q, &k, &v},
                         [&](Tape& t) { return probe(t, ad::attention(t.parameter(q), t.parameter(k), t.parameter(v), 2, {B, T, N, axis}).out, w); }),
              1e-6);
  }
}

TEST(Attention, SpatialIsPermutationEquivariant) {
  std::mt19937_64 rng(4);
  const int T = 3, N = 5, W = 4;
  const auto q = random_mat(T * N, W, rng), k = random_mat(T * N, W, rng), v = random_mat(T * N, W, rng);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  auto permute = [&](const Mat<double>& m) {
    Mat<double> o(m.rows(), m.cols());
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n) o.row(t * N + n) = m.row(t * N + perm[static_cast<std::size_t>(n)]);
    return o;
  };
  Tape t;
  const auto base = ad::attention(t.constant(q), t.constant(k), t.constant(v), 2, {1, T, N, AttentionAxis::spatial}).out.value();
  const auto moved = ad::attention(t.constant(permute(q)), t.constant(permute(k)), t.constant(permute(v)), 2, {1, T, N, AttentionAxis::spatial}).out.value();
  EXPECT_LT((moved - permute(base)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, SingleKeyReturnsValue) {
  std::mt19937_64 rng(5);
  const auto v = random_mat(4, 6, rng);
  Tape t;
  const auto res = ad::attention(t.constant(random_mat(4, 6, rng)), t.constant(random_mat(4, 6, rng)), t.constant(v), 3, {1, 4, 1, AttentionAxis::spatial});
  EXPECT_LT((res.out.value() - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, ZeroQueriesAverageValues) {
  std::mt19937_64 rng(6);
  const int T = 4, N = 3;
  const auto v = random_mat(T * N, 2, rng);
  Tape t;
  const auto res = ad::attention(t.constant(Mat<double>::Zero(T * N, 2)), t.constant(random_mat(T * N, 2, rng)), t.constant(v), 1, {1, T, N, AttentionAxis::temporal});
  for (int n = 0; n < N; ++n) {
    RowVec<double> mean = RowVec<double>::Zero(2);
    for (int s = 0; s < T; ++s) mean += v.row(s * N + n) / T;
    for (int s = 0; s < T; ++s) EXPECT_LT((res.out.value().row(s * N + n) - mean).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(res.probs->at(n, 0, 1, 2), 0.25, 1e-15);
  }
}

TEST(Attention, DropoutOnlyWhenTraining) {
  std::mt19937_64 rng(7);
  const auto q = random_mat(12, 4, rng), v = random_mat(12, 4, rng);
  Tape eval(false), train(true, 3);
  const auto a = ad::attention(eval.constant(q), eval.constant(q), eval.constant(v), 2, {1, 4, 3, AttentionAxis::temporal}, 0.5).out.value();
  const auto b = ad::attention(eval.constant(q), eval.constant(q), eval.constant(v), 2, {1, 4, 3, AttentionAxis::temporal}, 0.0).out.value();
  EXPECT_EQ(a, b);
  const auto c = ad::attention(train.constant(q), train.constant(q), train.constant(v), 2, {1, 4, 3, AttentionAxis::temporal}, 0.5).out.value();
  EXPECT_NE(a, c);
}

TEST(Attention, RejectsInconsistentShapes) {
  Tape t;
  const auto x = t.constant(Mat<double>::Ones(6, 4));
  EXPECT_THROW(ad::attention(x, x, x, 3, {1, 2, 3, AttentionAxis::temporal}), std::invalid_argument);
  EXPECT_THROW(ad::attention(x, x, x, 2, {1, 2, 2, AttentionAxis::temporal}), std::invalid_argument);
  EXPECT_THROW(ad::attention(x, x, t.constant(Mat<double>::Ones(6, 2)), 2, {1, 2, 3, AttentionAxis::temporal}), std::invalid_argument);
}
