#include <gtest/gtest.h>

#include <cmath>

#include "refseg/error.hpp"
#include "refseg/tlm.hpp"
#include "support/test_support.hpp"

namespace refseg {
namespace {

using testing::max_relative_grad_error;
using testing::random_matrix;

// Two-loop Gram + row softmax with the squared Frobenius norm as the single divisor.
Matrix affinity_oracle(const Matrix& x) {
  const Eigen::Index n = x.rows();
  double norm = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) norm += x.data()[i] * x.data()[i];
  if (norm == 0.0) norm = 1.0;
  Matrix out(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    double z = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      double g = 0.0;
      for (Eigen::Index k = 0; k < x.cols(); ++k) g += x(a, k) * x(b, k);
      out(a, b) = std::exp(g / norm);
      z += out(a, b);
    }
    out.row(a) /= z;
  }
  return out;
}

TEST(TextAugment, Cases) {
  Rng rng(1);
  const FeatureMatrix fv(random_matrix(4, 3, rng));
  EXPECT_TRUE(tlm::text_augment(fv, Matrix::Zero(1, 3)).isZero(0.0));

  const Matrix fs = random_matrix(1, 3, rng);
  const Matrix same = fs.replicate(4, 1);
  const Matrix ta = tlm::text_augment(FeatureMatrix(same), fs);
  for (int r = 0; r < 4; ++r) EXPECT_NEAR(ta(r, 0), fs.squaredNorm(), 1e-12);

  const Matrix got = tlm::text_augment(fv, fs);
  ASSERT_EQ(got.rows(), 4);
  ASSERT_EQ(got.cols(), 1);
  for (int r = 0; r < 4; ++r) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d += fv.data()(r, k) * fs(0, k);
    EXPECT_NEAR(got(r, 0), d, 1e-12);
  }
  EXPECT_THROW(tlm::text_augment(fv, Matrix::Zero(1, 2)), InvalidInput);
}

TEST(Affinity, Cases) {
  EXPECT_EQ(tlm::affinity(Matrix::Constant(1, 3, 2.0)).data(), Matrix::Ones(1, 1));
  const Matrix zero = tlm::affinity(Matrix::Zero(4, 3)).data();
  EXPECT_TRUE(zero.isApprox(Matrix::Constant(4, 4, 0.25), 1e-15));
  Rng rng(2);
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_TRUE(tlm::affinity(x).data().isApprox(affinity_oracle(x), 1e-10));
}

TEST(Affinity, RowsSumToOne) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Matrix x = random_matrix(1 + static_cast<int>(rng() % 8), 1 + static_cast<int>(rng() % 5), rng, 10.0);
    const Matrix a = tlm::affinity(x).data();
    EXPECT_GE(a.minCoeff(), 0.0);
    for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-6);
  }
  EXPECT_THROW(AffinityMap(Matrix::Constant(2, 2, 0.4)), InvalidInput);
}

TEST(Cpcl, SingleTokenIsZero) {
  Rng rng(4);
  const std::vector<FeatureMatrix> layers{FeatureMatrix(random_matrix(1, 4, rng)),
                                          FeatureMatrix(random_matrix(1, 4, rng))};
  EXPECT_EQ(tlm::cpcl_loss(layers, random_matrix(1, 4, rng)), 0.0);
}

TEST(Cpcl, UniformTwoByTwoClosedForm) {
  const AffinityMap uniform(Matrix::Constant(2, 2, 0.5));
  const std::vector<AffinityMap> vis(3, uniform);
  const std::vector<AffinityMap> ta(3, uniform);
  // Each layer: four entries of (1 - 0.5)^2 * 0.5^2.
  double oracle = 0.0;
  for (int layer = 0; layer < 3; ++layer) {
    for (int e = 0; e < 4; ++e) oracle += std::pow((1.0 - 0.5) * 0.5, 2);
  }
  EXPECT_NEAR(oracle, 0.75, 1e-15);
  EXPECT_NEAR(tlm::cpcl_from_maps(vis, ta), 0.75, 1e-10);

  // Zero features give uniform maps on both paths.
  const std::vector<FeatureMatrix> zeros(3, FeatureMatrix(Matrix::Zero(2, 3)));
  EXPECT_NEAR(tlm::cpcl_loss(zeros, Matrix::Ones(1, 3)), 0.75, 1e-10);
}

TEST(Cpcl, NonNegativeAndMatchesMaps) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    std::vector<FeatureMatrix> layers;
    std::vector<AffinityMap> vis;
    std::vector<AffinityMap> ta;
    const Matrix fs = random_matrix(1, 4, rng);
    for (int l = 0; l < 3; ++l) {
      layers.emplace_back(random_matrix(5, 4, rng));
      vis.push_back(tlm::affinity(layers.back().data()));
      ta.push_back(tlm::affinity(tlm::text_augment(layers.back(), fs)));
    }
    const double v = tlm::cpcl_loss(layers, fs);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, tlm::cpcl_from_maps(vis, ta), 1e-12);
  }
}

TEST(Cpcl, MissingLayerIsConfigError) {
  ag::Tape t;
  const ag::Var fs = t.constant(Matrix::Ones(1, 2));
  EXPECT_THROW(tlm::cpcl_loss(t, std::span<const ag::Var>{}, fs), ConfigError);
  const ag::Var layers[] = {t.constant(Matrix::Ones(2, 2)), ag::Var{}};
  EXPECT_THROW(tlm::cpcl_loss(t, layers, fs), ConfigError);
}

// The pseudo-label is held fixed: the live gradient equals the finite-difference gradient of
// the loss with the text-augmented maps frozen at their current values.
TEST(Cpcl, DetachContract) {
  Rng rng(7);
  const Matrix fv = random_matrix(4, 3, rng);
  const Matrix fs = random_matrix(1, 3, rng);
  const Matrix frozen_ta = tlm::affinity(tlm::text_augment(FeatureMatrix(fv), fs)).data();

  Parameter p("fv", fv);
  Parameter q("fs", fs);
  ag::Tape t;
  const ag::Var layers[] = {t.param(p)};
  t.backward(tlm::cpcl_loss(t, layers, t.param(q)));
  EXPECT_TRUE(q.grad.isZero(0.0));

  const auto stopped = [&](ag::Tape& tt, std::span<const ag::Var> x) {
    const ag::Var gap = ag::affine(tt, tlm::affinity(tt, x[0]), -1.0, 1.0);
    return ag::frobenius_sq(tt, ag::mul(tt, gap, tt.constant_ref(frozen_ta)));
  };
  Parameter r("fv", fv);
  ag::Tape t2;
  const ag::Var x2[] = {t2.param(r)};
  t2.backward(stopped(t2, x2));
  EXPECT_TRUE(p.grad.isApprox(r.grad, 1e-12));
  EXPECT_LT(max_relative_grad_error(stopped, {fv}), 1e-4);
}

TEST(Reweight, Cases) {
  Matrix fs(1, 2);
  fs << 1, 0;
  Matrix orth(3, 2);
  orth << 0, 1, 0, -2, 0, 0.5;
  const std::vector<FeatureMatrix> o{FeatureMatrix(orth), FeatureMatrix(orth)};
  EXPECT_TRUE(tlm::reweight_and_concat(o, fs).data().isZero(0.0));

  Matrix par(2, 2);
  par << 3, 0, 0.5, 0;
  const std::vector<FeatureMatrix> p{FeatureMatrix(par), FeatureMatrix(2.0 * par)};
  Matrix want(2, 4);
  want << par, 2.0 * par;
  EXPECT_TRUE(tlm::reweight_and_concat(p, fs).data().isApprox(want, 1e-15));
}

TEST(Reweight, LoopOracle) {
  Rng rng(8);
  const Matrix fs = random_matrix(1, 3, rng);
  std::vector<FeatureMatrix> layers;
  for (int l = 0; l < 3; ++l) layers.emplace_back(random_matrix(4, 3, rng));
  const Matrix got = tlm::reweight_and_concat(layers, fs).data();
  ASSERT_EQ(got.cols(), 9);
  for (int l = 0; l < 3; ++l) {
    for (int r = 0; r < 4; ++r) {
      const auto row = layers[static_cast<std::size_t>(l)].data().row(r);
      const double cos = row.dot(fs.row(0)) / (row.norm() * fs.norm());
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(got(r, 3 * l + k), cos * row(k), 1e-10);
    }
  }
}

TlmParams toy_params(Rng& rng) { return TlmParams(3, 5, 2, rng); }

TEST(Prototype, Cases) {
  Rng rng(9);
  const TlmParams p = toy_params(rng);
  const Matrix token = random_matrix(1, 6, rng);
  const Matrix reduced = token * p.reduce_w.value + p.reduce_b.value;
  EXPECT_TRUE(tlm::prototype(FeatureMatrix(token.replicate(5, 1)), p).isApprox(reduced, 1e-12));
  EXPECT_TRUE(tlm::prototype(FeatureMatrix(token), p).isApprox(reduced, 1e-15));

  const Matrix fused = random_matrix(4, 6, rng);
  const Matrix got = tlm::prototype(FeatureMatrix(fused), p);
  for (int d = 0; d < 3; ++d) {
    double s = 0.0;
    for (int r = 0; r < 4; ++r) {
      double v = p.reduce_b.value(0, d);
      for (int k = 0; k < 6; ++k) v += fused(r, k) * p.reduce_w.value(k, d);
      s += v;
    }
    EXPECT_NEAR(got(0, d), s / 4.0, 1e-12);
  }
}

TEST(Tccl, ClosedForms) {
  EXPECT_EQ(tlm::tccl_from_scores(0.3, {}), 0.0);
  const double one[] = {0.42};
  EXPECT_NEAR(tlm::tccl_from_scores(0.42, one), std::log(2.0), 1e-12);
  const double two[] = {0.0, -1.0};
  EXPECT_NEAR(tlm::tccl_from_scores(1.0, two), std::log(1.0 + std::exp(-1.0) + std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(tlm::tccl_from_scores(1.0, two), 0.4076, 1e-4);
}

TEST(Tccl, VectorFormNoNegativesAndEqualScores) {
  Rng rng(10);
  const Matrix p = random_matrix(1, 4, rng);
  const Matrix pos = random_matrix(1, 4, rng);
  EXPECT_EQ(tlm::tccl_loss(p, pos, {}), 0.0);
  const Matrix negs[] = {pos * 3.0};
  EXPECT_NEAR(tlm::tccl_loss(p, pos, negs), std::log(2.0), 1e-12);
}

TEST(Tccl, BoundsAndMonotonicity) {
  for (int k = 1; k <= 4; ++k) {
    const double lo = std::log(1.0 + k * std::exp(-2.0));
    const double hi = std::log(1.0 + k * std::exp(2.0));
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 20; ++i) {
      const double s_pos = -1.0 + 0.1 * i;
      const std::vector<double> negs(static_cast<std::size_t>(k), 0.3 - 0.2 * (k % 2));
      const double v = tlm::tccl_from_scores(s_pos, negs);
      EXPECT_LT(v, prev);
      prev = v;
      EXPECT_GE(v, lo);
      EXPECT_LE(v, hi);
    }
    const std::vector<double> best(static_cast<std::size_t>(k), -1.0);
    EXPECT_NEAR(tlm::tccl_from_scores(1.0, best), lo, 1e-12);
  }
}

TEST(Tccl, ZeroVectorIsGuarded) {
  const Matrix z = Matrix::Zero(1, 3);
  const Matrix negs[] = {Matrix::Ones(1, 3)};
  const double v = tlm::tccl_loss(z, Matrix::Ones(1, 3), negs);
  EXPECT_NEAR(v, std::log(2.0), 1e-12);
}

TEST(Tccl, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const auto f = [](ag::Tape& t, std::span<const ag::Var> x) { return tlm::tccl_loss(t, x[0], x[1], x.subspan(2)); };
  const double err = max_relative_grad_error(f, {random_matrix(1, 4, rng), random_matrix(1, 4, rng),
                                                 random_matrix(1, 4, rng), random_matrix(1, 4, rng),
                                                 random_matrix(1, 4, rng)});
  EXPECT_LT(err, 1e-4);
}

TEST(TlmFusion, GradientThroughReweightReducePrototype) {
  Rng rng(12);
  const auto f = [](ag::Tape& t, std::span<const ag::Var> x) {
    const ag::Var fused = tlm::reweight_and_concat(t, x.first(2), x[2]);
    const ag::Var proto = tlm::prototype(t, tlm::reduce(t, fused, x[3], x[4]));
    return ag::sum_all(t, ag::mul(t, proto, proto));
  };
  const double err = max_relative_grad_error(
      f, {random_matrix(4, 3, rng), random_matrix(4, 3, rng), random_matrix(1, 3, rng), random_matrix(6, 3, rng),
          random_matrix(1, 3, rng)});
  EXPECT_LT(err, 1e-4);
}

}  // namespace
}  // namespace refseg
