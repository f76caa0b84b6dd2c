#include <gtest/gtest.h>

#include "refseg/encoders.hpp"
#include "refseg/error.hpp"
#include "support/test_support.hpp"

namespace refseg {
namespace {

Image random_image(const VisionConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  Image img(cfg.image_size, cfg.image_size, cfg.channels);
  for (auto& v : img.data) v = u(rng);
  return img;
}

TEST(VisionEncoder, LayerIsDeterministic) {
  const VisionEncoder enc(VisionConfig{});
  Rng rng(1);
  const FeatureMatrix x(testing::random_matrix(enc.tokens(), enc.dim(), rng));
  EXPECT_EQ(enc.layer(4, x), enc.layer(4, x));
  const VisionEncoder again(VisionConfig{});
  EXPECT_EQ(enc.checksum(), again.checksum());
}

TEST(VisionEncoder, ZeroInputThroughBiasFreeBlock) {
  Rng rng(2);
  FrozenBlock b;
  b.ln_gain = Parameter("g", Matrix::Ones(1, 4), false);
  b.ln_bias = Parameter("b", Matrix::Zero(1, 4), false);
  b.w1 = Parameter("w1", testing::random_matrix(4, 6, rng), false);
  b.b1 = Parameter("b1", Matrix::Zero(1, 6), false);
  b.w2 = Parameter("w2", testing::random_matrix(6, 4, rng), false);
  b.b2 = Parameter("b2", Matrix::Zero(1, 4), false);
  ag::Tape t;
  const ag::Var out = b.forward(t, t.constant(Matrix::Zero(3, 4)));
  // LN(0) = 0 and gelu(0) = 0, so the block maps zero to zero.
  EXPECT_TRUE(t.value(out).isZero(0.0));
}

TEST(VisionEncoder, GoldenUnitBasisLayer) {
  const VisionEncoder enc(VisionConfig{});
  Matrix x = Matrix::Zero(enc.tokens(), enc.dim());
  for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, r % x.cols()) = 1.0;
  const Matrix out = enc.layer(1, FeatureMatrix(x)).data();
  EXPECT_NEAR(out(0, 0), 0.68172883016323671, 1e-12);
  EXPECT_NEAR(out(5, 7), -0.027500516448754567, 1e-12);
  EXPECT_NEAR(out.sum(), 154.69280540589079, 1e-9);
  EXPECT_NEAR(out.squaredNorm(), 502.61055803124475, 1e-9);
}

TEST(VisionEncoder, GoldenChecksums) {
  EXPECT_EQ(VisionEncoder(VisionConfig{}).checksum(), 0x9d1bf1fafa3036acULL);
  EXPECT_EQ(TextEncoder(TextConfig{}).checksum(), 0x849df926c5cb61deULL);
}

TEST(VisionEncoder, ForwardAllMatchesLayerChain) {
  const VisionConfig cfg;
  const VisionEncoder enc(cfg);
  Rng rng(3);
  const Image img = random_image(cfg, rng);
  const auto all = enc.forward_all(img);
  ASSERT_EQ(all.size(), static_cast<std::size_t>(cfg.layers + 1));
  EXPECT_EQ(all[0], enc.embed(img));
  FeatureMatrix x = all[0];
  for (int i = 1; i <= cfg.layers; ++i) {
    x = enc.layer(i, x);
    EXPECT_EQ(x, all[static_cast<std::size_t>(i)]) << i;
  }
}

TEST(VisionEncoder, PatchifyLayout) {
  VisionConfig cfg;
  cfg.image_size = 4;
  cfg.patch = 2;
  cfg.channels = 1;
  const VisionEncoder enc(cfg);
  Image img(4, 4, 1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) img.at(y, x, 0) = static_cast<float>(10 * y + x);
  }
  const Matrix p = enc.patchify(img);
  ASSERT_EQ(p.rows(), 4);
  // Patch 1 is the top-right 2x2 block, read row by row.
  EXPECT_EQ(p.row(1), (Eigen::RowVector4d(2, 3, 12, 13)));
}

TEST(VisionEncoder, RejectsBadInput) {
  const VisionEncoder enc(VisionConfig{});
  EXPECT_THROW(enc.patchify(Image(32, 32, 3)), InvalidInput);
  const FeatureMatrix x(Matrix::Zero(enc.tokens(), enc.dim()));
  EXPECT_THROW(enc.layer(0, x), InvalidInput);
  EXPECT_THROW(enc.layer(13, x), InvalidInput);
}

TEST(VisionEncoder, RowNormsStayBounded) {
  const VisionConfig cfg;
  const VisionEncoder enc(cfg);
  Rng rng(4);
  for (const auto& f : enc.forward_all(random_image(cfg, rng))) {
    const Eigen::VectorXd norms = f.data().rowwise().norm();
    EXPECT_GT(norms.minCoeff(), 1e-3);
    EXPECT_LT(norms.maxCoeff(), 1e3);
  }
}

TEST(TextEncoder, PaddingDoesNotChangeSentence) {
  const TextEncoder enc(TextConfig{});
  const std::vector<std::int32_t> bare{7, 12, 20, 1};
  const std::vector<std::int32_t> padded{7, 12, 20, 1, 0, 0, 0, 0, 0};
  const TextFeatures a = enc.encode(bare);
  const TextFeatures b = enc.encode(padded);
  EXPECT_EQ(a.sentence, b.sentence);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.length, 4);
}

TEST(TextEncoder, PrefixIsCausal) {
  const TextEncoder enc(TextConfig{});
  const TextFeatures a = enc.encode(std::vector<std::int32_t>{7, 12, 20, 1});
  const TextFeatures b = enc.encode(std::vector<std::int32_t>{7, 12, 25, 1});
  EXPECT_EQ(a.tokens.data().topRows(2), b.tokens.data().topRows(2));
  EXPECT_NE(a.sentence, b.sentence);
}

TEST(TextEncoder, Shapes) {
  const TextConfig cfg;
  const TextEncoder enc(cfg);
  const TextFeatures f = enc.encode(std::vector<std::int32_t>{3, 4, 1});
  EXPECT_EQ(f.tokens.tokens(), cfg.len);
  EXPECT_EQ(f.tokens.channels(), cfg.dim);
  EXPECT_EQ(f.sentence.rows(), 1);
  EXPECT_EQ(f.sentence.cols(), cfg.dim);
  EXPECT_TRUE(f.tokens.data().bottomRows(cfg.len - 3).isZero(0.0));
  EXPECT_EQ(f.sentence, f.tokens.data().row(2));
}

TEST(TextEncoder, RejectsBadInput) {
  const TextEncoder enc(TextConfig{});
  EXPECT_THROW(enc.encode(std::vector<std::int32_t>(5, 0)), InvalidInput);
  EXPECT_THROW(enc.encode(std::vector<std::int32_t>{3, 400}), InvalidInput);
  EXPECT_THROW(enc.encode(std::vector<std::int32_t>(40, 3)), InvalidInput);
}

}  // namespace
}  // namespace refseg
