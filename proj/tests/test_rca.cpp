#include <gtest/gtest.h>

#include <cmath>

#include "refseg/error.hpp"
#include "refseg/rca.hpp"
#include "support/test_support.hpp"

namespace refseg {
namespace {

using testing::max_relative_grad_error;
using testing::random_matrix;

VisionConfig toy_vision(int layers = 2) {
  VisionConfig c;
  c.dim = 4;
  c.layers = layers;
  c.patch = 2;
  c.image_size = 4;
  c.channels = 1;
  c.hidden = 6;
  return c;
}

TextConfig toy_text() {
  TextConfig c;
  c.dim = 4;
  c.layers = 1;
  c.len = 3;
  c.vocab = 10;
  c.hidden = 6;
  return c;
}

Image toy_image(Rng& rng) {
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  Image img(4, 4, 1);
  for (auto& v : img.data) v = u(rng);
  return img;
}

TEST(CostVolume, OrthogonalGivesZero) {
  Matrix fv(2, 2);
  fv << 1, 0, 2, 0;
  Matrix ft(1, 2);
  ft << 0, 3;
  EXPECT_TRUE(rca::cost_volume(FeatureMatrix(fv), FeatureMatrix(ft)).data().isZero(0.0));
}

TEST(CostVolume, SelfCosineIsOne) {
  Matrix v(1, 3);
  v << 0.3, -1.2, 2.0;
  EXPECT_NEAR(rca::cost_volume(FeatureMatrix(v), FeatureMatrix(v)).data()(0, 0), 1.0, 1e-15);
}

TEST(CostVolume, HandCase) {
  Matrix fv(2, 2);
  fv << 1, 0, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
  Matrix ft(2, 2);
  ft << 0, 1, 1, 0;
  Matrix want(2, 2);
  // Dot products over norms, entry by entry.
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      double dot = 0, na = 0, nb = 0;
      for (int k = 0; k < 2; ++k) {
        dot += fv(a, k) * ft(b, k);
        na += fv(a, k) * fv(a, k);
        nb += ft(b, k) * ft(b, k);
      }
      want(a, b) = std::max(0.0, dot / (std::sqrt(na) * std::sqrt(nb)));
    }
  }
  const Matrix got = rca::cost_volume(FeatureMatrix(fv), FeatureMatrix(ft)).data();
  EXPECT_TRUE(got.isApprox(want, 1e-12));
  EXPECT_NEAR(got(0, 0), 0.0, 1e-4);
  EXPECT_NEAR(got(0, 1), 1.0, 1e-4);
  EXPECT_NEAR(got(1, 0), 0.7071, 1e-4);
  EXPECT_NEAR(got(1, 1), 0.7071, 1e-4);
}

TEST(CostVolume, ZeroRowIsGuarded) {
  Matrix fv = Matrix::Zero(2, 3);
  fv(1, 0) = 1.0;
  const Matrix got = rca::cost_volume(FeatureMatrix(fv), FeatureMatrix(Matrix::Ones(2, 3))).data();
  EXPECT_TRUE(got.allFinite());
  EXPECT_EQ(got.row(0).sum(), 0.0);
}

TEST(CostVolume, EntriesInUnitInterval) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Matrix c =
        rca::cost_volume(FeatureMatrix(random_matrix(6, 5, rng)), FeatureMatrix(random_matrix(4, 5, rng))).data();
    EXPECT_GE(c.minCoeff(), 0.0);
    EXPECT_LE(c.maxCoeff(), 1.0 + 1e-6);
  }
  EXPECT_THROW(CostVolume(Matrix::Constant(1, 1, 1.5)), InvalidInput);
  EXPECT_THROW(CostVolume(Matrix::Constant(1, 1, -0.1)), InvalidInput);
}

RcaBlock toy_block(Rng& rng, RcaVariant v = RcaVariant::AddRescaled) {
  RcaConfig cfg;
  cfg.variant = v;
  cfg.proj_dim = 3;
  return RcaBlock(1, 4, 4, 3, cfg, rng);
}

TEST(SemanticMask, ZeroCostZeroBias) {
  Rng rng(6);
  const RcaBlock b = toy_block(rng);
  const FeatureMatrix fv(random_matrix(5, 4, rng));
  EXPECT_TRUE(rca::semantic_mask(CostVolume(Matrix::Zero(5, 3)), fv, b).data().isZero(0.0));
}

TEST(SemanticMask, ConstantOneMaskIsIdentity) {
  Rng rng(7);
  RcaBlock b = toy_block(rng);
  b.expand_w.value.setZero();
  b.expand_b.value.setOnes();
  const FeatureMatrix fv(random_matrix(5, 4, rng));
  const CostVolume c(random_matrix(5, 3, rng).cwiseAbs().cwiseMin(1.0));
  EXPECT_EQ(rca::semantic_mask(c, fv, b), fv);
}

TEST(SemanticMask, LoopOracle) {
  Rng rng(8);
  RcaBlock b = toy_block(rng);
  b.expand_b.value = random_matrix(1, 4, rng);
  const Matrix fv = random_matrix(5, 4, rng);
  const Matrix c = random_matrix(5, 3, rng).cwiseAbs().cwiseMin(1.0);
  const Matrix got = rca::semantic_mask(CostVolume(c), FeatureMatrix(fv), b).data();
  for (int r = 0; r < 5; ++r) {
    for (int d = 0; d < 4; ++d) {
      double m = b.expand_b.value(0, d);
      for (int k = 0; k < 3; ++k) m += c(r, k) * b.expand_w.value(k, d);
      EXPECT_NEAR(got(r, d), m * fv(r, d), 1e-12);
    }
  }
}

TEST(SemanticMask, ShapeMismatch) {
  Rng rng(9);
  const RcaBlock b = toy_block(rng);
  EXPECT_THROW(rca::semantic_mask(CostVolume(Matrix::Zero(5, 2)), FeatureMatrix(random_matrix(5, 4, rng)), b),
               InvalidInput);
}

struct InjectFixture : ::testing::Test {
  Rng rng{10};
  VisionEncoder enc{toy_vision(3)};
  FeatureMatrix fv_in{random_matrix(4, 4, rng)};
  FeatureMatrix fvt{random_matrix(4, 4, rng)};
};

TEST_F(InjectFixture, ZeroRescalePassesThrough) {
  RcaBlock b = toy_block(rng);
  b.set_rescale(RescaleDiagonal{std::vector<double>(4, 0.0)});
  EXPECT_EQ(rca::residual_inject(fv_in, fvt, b, RcaVariant::AddRescaled, enc), enc.layer(2, fv_in));
}

TEST_F(InjectFixture, InitialRescaleIsPointTwo) {
  const RcaBlock b = toy_block(rng);
  for (double v : b.rescale_diagonal().values) EXPECT_EQ(v, 0.2);
  const Matrix want = enc.layer(2, fv_in).data() + 0.2 * fvt.data();
  EXPECT_TRUE(rca::residual_inject(fv_in, fvt, b, RcaVariant::AddRescaled, enc).data().isApprox(want, 1e-15));
}

TEST_F(InjectFixture, AddEqualsAddRescaledWithUnitScale) {
  RcaBlock b = toy_block(rng);
  b.set_rescale(RescaleDiagonal{std::vector<double>(4, 1.0)});
  EXPECT_EQ(rca::residual_inject(fv_in, fvt, b, RcaVariant::Add, enc),
            rca::residual_inject(fv_in, fvt, b, RcaVariant::AddRescaled, enc));
}

TEST_F(InjectFixture, OtherVariants) {
  RcaBlock b = toy_block(rng, RcaVariant::ConcatRescaled);
  const Matrix next_in = enc.layer(2, fv_in).data();
  const Matrix next_t = enc.layer(2, fvt).data();
  const Matrix phi = b.rescale.value;
  EXPECT_EQ(rca::residual_inject(fv_in, fvt, b, RcaVariant::ComposeOnly, enc).data(), next_t);
  EXPECT_TRUE(rca::residual_inject(fv_in, fvt, b, RcaVariant::ComposeRescaled, enc)
                  .data()
                  .isApprox(Matrix(next_t.array().rowwise() * phi.row(0).array()), 1e-15));
  // [I; I] reduce starts the concatenating variants at the plain sum.
  EXPECT_TRUE(rca::residual_inject(fv_in, fvt, b, RcaVariant::Concat, enc).data().isApprox(next_in + fvt.data(), 1e-14));
  EXPECT_TRUE(rca::residual_inject(fv_in, fvt, b, RcaVariant::ConcatRescaled, enc)
                  .data()
                  .isApprox(next_in + 0.2 * fvt.data(), 1e-14));
}

TEST_F(InjectFixture, RejectsWrongRescaleLength) {
  RcaBlock b = toy_block(rng);
  EXPECT_THROW(b.set_rescale(RescaleDiagonal{{1.0, 2.0}}), InvalidInput);
}

TEST(RcaLayers, Validation) {
  const int ok[] = {1, 3, 5, 7, 9, 11};
  EXPECT_NO_THROW(validate_rca_layers(ok, 12));
  const int zero[] = {0, 3};
  EXPECT_THROW(validate_rca_layers(zero, 12), ConfigError);
  const int last[] = {12};
  EXPECT_THROW(validate_rca_layers(last, 12), ConfigError);
  const int dup[] = {3, 3};
  EXPECT_THROW(validate_rca_layers(dup, 12), ConfigError);
  const int unsorted[] = {5, 3};
  EXPECT_THROW(validate_rca_layers(unsorted, 12), ConfigError);
}

struct StackFixture : ::testing::Test {
  Rng rng{11};
  VisionEncoder enc{toy_vision(2)};
  TextEncoder text{toy_text()};
  Image img = toy_image(rng);
  TextFeatures tf = text.encode(std::vector<std::int32_t>{4, 5, 1});

  RcaConfig one_block() const {
    RcaConfig c;
    c.layers = {1};
    c.proj_dim = 3;
    return c;
  }
};

TEST_F(StackFixture, NoBlocksIsFrozenForward) {
  RcaConfig c = one_block();
  c.layers.clear();
  RcaStack stack(enc, text, c, rng);
  EXPECT_EQ(stack.forward(img, tf, true), enc.forward_all(img));
}

TEST_F(StackFixture, DisabledIsFrozenForward) {
  RcaStack stack(enc, text, one_block(), rng);
  EXPECT_EQ(stack.forward(img, tf, false), enc.forward_all(img));
}

TEST_F(StackFixture, ZeroRescaleIsFrozenForward) {
  const VisionEncoder deep(toy_vision(6));
  RcaConfig c = one_block();
  c.layers = {1, 3, 5};
  RcaStack stack(deep, text, c, rng);
  for (auto& b : stack.blocks()) b.set_rescale(RescaleDiagonal{std::vector<double>(4, 0.0)});
  EXPECT_EQ(stack.forward(img, tf, true), deep.forward_all(img));
}

TEST_F(StackFixture, HandComposedOneBlock) {
  RcaStack stack(enc, text, one_block(), rng);
  const RcaBlock& b = stack.blocks()[0];
  const auto got = stack.forward(img, tf, true);

  const Matrix f1 = enc.layer(1, enc.embed(img)).data();
  const Matrix pv = f1 * b.vision_proj.value;
  const Matrix pt = tf.tokens.data() * b.text_proj.value;
  Matrix cost(pv.rows(), pt.rows());
  for (Eigen::Index a = 0; a < pv.rows(); ++a) {
    for (Eigen::Index k = 0; k < pt.rows(); ++k) {
      const double d = pv.row(a).dot(pt.row(k));
      cost(a, k) = std::max(0.0, d / (std::max(pv.row(a).norm(), kCosineEps) * std::max(pt.row(k).norm(), kCosineEps)));
    }
  }
  Matrix mask = cost * b.expand_w.value;
  mask.rowwise() += b.expand_b.value.row(0);
  const Matrix fvt = mask.cwiseProduct(f1);
  Matrix want = enc.layer(2, FeatureMatrix(f1)).data();
  for (Eigen::Index d = 0; d < want.cols(); ++d) want.col(d) += b.rescale.value(0, d) * fvt.col(d);

  ASSERT_EQ(got.size(), 3U);
  EXPECT_TRUE(got[1].data().isApprox(f1, 1e-14));
  EXPECT_TRUE(got[2].data().isApprox(want, 1e-12));
}

// Gradient of sum(output) through cost volume, mask and injection, for every tunable tensor.
TEST(RcaGradient, ChainMatchesFiniteDifferences) {
  Rng rng(12);
  const VisionEncoder enc(toy_vision(2));
  const Matrix fv = random_matrix(4, 4, rng);
  const Matrix ft = random_matrix(3, 4, rng);
  for (RcaVariant v : {RcaVariant::AddRescaled, RcaVariant::Add, RcaVariant::ComposeRescaled,
                       RcaVariant::ConcatRescaled}) {
    const RcaBlock b = toy_block(rng, v);
    Matrix reduce = b.reduce.size() > 0 ? b.reduce.value : Matrix::Zero(8, 4);
    reduce += random_matrix(8, 4, rng, 0.1);
    auto f = [&](ag::Tape& t, std::span<const ag::Var> x) {
      // x: vision_proj, text_proj, expand_w, expand_b, rescale, reduce
      const ag::Var in = t.constant_ref(fv);
      const ag::Var cost = rca::cost_volume(t, ag::matmul(t, in, x[0]), ag::matmul(t, t.constant_ref(ft), x[1]));
      const ag::Var fvt = rca::semantic_mask(t, cost, in, x[2], x[3]);
      const ag::Var out =
          rca::residual_inject(t, v, in, fvt, x[4], x[5], [&](ag::Var z) { return enc.layer(t, 2, z); });
      return ag::sum_all(t, out);
    };
    const double err = max_relative_grad_error(
        f, {b.vision_proj.value, b.text_proj.value, b.expand_w.value, random_matrix(1, 4, rng, 0.3),
            b.rescale.value + random_matrix(1, 4, rng, 0.1), reduce});
    EXPECT_LT(err, 1e-4) << to_string(v);
  }
}

}  // namespace
}  // namespace refseg
