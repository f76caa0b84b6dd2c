#include <gtest/gtest.h>

#include "refseg/error.hpp"
#include "refseg/metrics.hpp"
#include "refseg/synthbench.hpp"
#include "support/test_support.hpp"

namespace refseg {
namespace {

using testing::inter_union_oracle;
using testing::iou_oracle;
using testing::nta_oracle;
using testing::random_mask;

// target inside cocategory, both drawn at random.
std::pair<BinaryMask, BinaryMask> random_gt(int w, int h, Rng& rng) {
  const BinaryMask cocat = random_mask(w, h, 0.5, rng);
  const BinaryMask target = cocat & random_mask(w, h, 0.5, rng);
  return {target, cocat};
}

TEST(NtaIou, PerfectTargetPrediction) {
  BinaryMask target(4, 4);
  target.set(0, 0);
  BinaryMask cocat = target;
  cocat.set(3, 3);
  EXPECT_EQ(nta_iou({target, target, cocat}), 0.0);
}

TEST(NtaIou, PredictingEveryCocategoryPixel) {
  BinaryMask target(4, 4);
  target.set(1, 1);
  BinaryMask cocat = target;
  cocat.set(2, 2);
  cocat.set(2, 3);
  EXPECT_EQ(nta_iou({cocat, target, cocat}), 1.0);
}

TEST(NtaIou, UndefinedWhenBothSetsEmpty) {
  BinaryMask target(3, 3);
  target.set(1, 1);
  EXPECT_FALSE(nta_iou({target, target, target}).has_value());
}

TEST(NtaIou, RejectsBadRecords) {
  const BinaryMask a(3, 3);
  EXPECT_THROW(nta_iou({BinaryMask(2, 3), a, a}), InvalidInput);
  BinaryMask target(3, 3);
  target.set(0, 0);
  EXPECT_THROW(nta_iou({a, target, a}), InvalidInput);
}

TEST(NtaIou, MatchesPixelOracle) {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto [target, cocat] = random_gt(8, 8, rng);
    const BinaryMask pred = random_mask(8, 8, 0.4, rng);
    const auto got = nta_iou({pred, target, cocat});
    const auto want = nta_oracle(pred, target, cocat);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) {
      EXPECT_NEAR(*got, *want, 1e-12);
    }
  }
}

TEST(NtaIou, RangeAndZeroCharacterisation) {
  Rng rng(102);
  for (int trial = 0; trial < 500; ++trial) {
    const auto [target, cocat] = random_gt(6, 6, rng);
    const BinaryMask pred = random_mask(6, 6, 0.3, rng);
    const auto v = nta_iou({pred, target, cocat});
    if (!v) continue;
    EXPECT_GE(*v, 0.0);
    EXPECT_LE(*v, 1.0);
    const bool inside = pred.subset_of(target);
    const bool disjoint = ((pred - target) & (cocat - target)).empty();
    EXPECT_EQ(*v == 0.0, inside || disjoint);
  }
}

TEST(NtaIou, InvariantToPixelsInsideTarget) {
  Rng rng(103);
  for (int trial = 0; trial < 500; ++trial) {
    const auto [target, cocat] = random_gt(8, 8, rng);
    const BinaryMask pred = random_mask(8, 8, 0.3, rng);
    const BinaryMask grown = pred | (target & random_mask(8, 8, 0.5, rng));
    EXPECT_EQ(nta_iou({pred, target, cocat}), nta_iou({grown, target, cocat}));
  }
}

TEST(Oiou, Basics) {
  Rng rng(7);
  std::vector<BinaryMask> gts{random_mask(5, 5, 0.5, rng), random_mask(5, 5, 0.5, rng)};
  EXPECT_EQ(oiou(gts, gts), 1.0);
  BinaryMask gt(3, 3);
  gt.set(1, 1);
  const std::vector<BinaryMask> p{BinaryMask(3, 3)};
  const std::vector<BinaryMask> g{gt};
  EXPECT_EQ(oiou(p, g), 0.0);
  EXPECT_THROW(oiou(std::span<const BinaryMask>{}, std::span<const BinaryMask>{}), InvalidInput);
}

TEST(Miou, Basics) {
  BinaryMask a(4, 4);
  a.set(0, 0);
  BinaryMask b(4, 4);
  b.set(3, 3);
  const std::vector<BinaryMask> preds{a, a};
  const std::vector<BinaryMask> gts{a, b};
  EXPECT_EQ(miou(preds, gts), 0.5);
  EXPECT_EQ(miou(gts, gts), 1.0);
  const std::vector<BinaryMask> empty{BinaryMask(2, 2)};
  EXPECT_EQ(miou(empty, empty), 1.0);
}

TEST(Metrics, RandomPairsMatchOracles) {
  Rng rng(55);
  std::vector<BinaryMask> preds;
  std::vector<BinaryMask> gts;
  for (int i = 0; i < 50; ++i) {
    const int w = 1 + static_cast<int>(rng() % 16);
    const int h = 1 + static_cast<int>(rng() % 16);
    preds.push_back(random_mask(w, h, 0.5, rng));
    gts.push_back(random_mask(w, h, 0.5, rng));
  }
  long inter = 0;
  long uni = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto [a, b] = inter_union_oracle(preds[i], gts[i]);
    inter += a;
    uni += b;
    sum += iou_oracle(preds[i], gts[i]);
  }
  EXPECT_NEAR(oiou(preds, gts), static_cast<double>(inter) / static_cast<double>(uni), 1e-12);
  EXPECT_NEAR(miou(preds, gts), sum / 50.0, 1e-12);
}

TEST(Metrics, SingleElementOiouEqualsMiou) {
  Rng rng(56);
  for (int i = 0; i < 200; ++i) {
    const std::vector<BinaryMask> p{random_mask(6, 6, 0.5, rng)};
    const std::vector<BinaryMask> g{random_mask(6, 6, 0.5, rng)};
    if (p[0].empty() && g[0].empty()) continue;
    EXPECT_EQ(oiou(p, g), miou(p, g));
  }
}

// Mask pair with |inter| = num and |union| = den on a 1 x den strip.
std::pair<BinaryMask, BinaryMask> pair_with_iou(int num, int den) {
  BinaryMask p(den, 1);
  BinaryMask g(den, 1);
  for (int x = 0; x < den; ++x) p.set(x, 0);
  for (int x = 0; x < num; ++x) g.set(x, 0);
  return {p, g};
}

TEST(PrecisionAt, HandCounted) {
  std::vector<BinaryMask> preds;
  std::vector<BinaryMask> gts;
  for (auto [n, d] : {std::pair{3, 5}, std::pair{4, 5}, std::pair{19, 20}}) {
    auto [p, g] = pair_with_iou(n, d);
    preds.push_back(p);
    gts.push_back(g);
  }
  const auto pr = precision_at(preds, gts, kDefaultPrecisionThresholds);
  EXPECT_DOUBLE_EQ(pr.at(0.5), 100.0);
  EXPECT_NEAR(pr.at(0.7), 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(pr.at(0.9), 100.0 / 3.0, 1e-12);
}

TEST(PrecisionAt, StrictThreshold) {
  auto [p, g] = pair_with_iou(1, 2);
  const std::vector<BinaryMask> preds{p};
  const std::vector<BinaryMask> gts{g};
  const double x[] = {0.5};
  EXPECT_EQ(precision_at(preds, gts, x).at(0.5), 0.0);
}

TEST(PrecisionAt, PerfectAndEmpty) {
  Rng rng(9);
  std::vector<BinaryMask> gts;
  std::vector<BinaryMask> empties;
  for (int i = 0; i < 5; ++i) {
    BinaryMask g = random_mask(4, 4, 0.5, rng);
    g.set(0, 0);
    gts.push_back(g);
    empties.emplace_back(4, 4);
  }
  for (const auto& [x, v] : precision_at(gts, gts, kDefaultPrecisionThresholds)) EXPECT_EQ(v, 100.0) << x;
  for (const auto& [x, v] : precision_at(empties, gts, kDefaultPrecisionThresholds)) EXPECT_EQ(v, 0.0) << x;
}

TEST(PrecisionAt, MonotoneInThreshold) {
  Rng rng(10);
  std::vector<BinaryMask> preds;
  std::vector<BinaryMask> gts;
  for (int i = 0; i < 40; ++i) {
    preds.push_back(random_mask(5, 5, 0.6, rng));
    gts.push_back(random_mask(5, 5, 0.6, rng));
  }
  std::vector<double> xs;
  for (int k = 1; k < 20; ++k) xs.push_back(k / 20.0);
  const auto pr = precision_at(preds, gts, xs);
  double prev = 100.0;
  for (const auto& [x, v] : pr) {
    EXPECT_LE(v, prev) << x;
    prev = v;
  }
}

RISExample bare_example(const BinaryMask& target, std::vector<BinaryMask> siblings) {
  RISExample ex;
  ex.image = Image(target.height(), target.width(), 3);
  ex.positive_text = {2, 1};
  ex.target_mask = target;
  ex.sibling_masks = std::move(siblings);
  return ex;
}

TEST(NtaSubset, NoSiblingsMeansEmpty) {
  BinaryMask t(4, 4);
  t.set(1, 1);
  const std::vector<RISExample> ds{bare_example(t, {}), bare_example(t, {})};
  EXPECT_TRUE(build_nta_subset(ds).empty());
}

TEST(NtaSubset, CocategoryIsUnionOfSiblings) {
  BinaryMask t(4, 4);
  t.set(0, 0);
  BinaryMask s1(4, 4);
  s1.set(1, 1);
  BinaryMask s2(4, 4);
  s2.set(2, 2);
  const std::vector<RISExample> ds{bare_example(t, {s1, s2})};
  const auto sub = build_nta_subset(ds);
  ASSERT_EQ(sub.size(), 1U);
  EXPECT_EQ(sub[0].cocategory_gt, t | s1 | s2);
  EXPECT_EQ(sub[0].target_gt, t);
}

TEST(NtaSubset, CountMatchesIndependentCount) {
  const auto ds = synth::generate(17, 200, 0.4);
  // Count straight from the records: two or more instances of the target's shape.
  std::size_t expected = 0;
  for (const auto& ex : ds) expected += ex.sibling_masks.empty() ? 0 : 1;
  EXPECT_EQ(build_nta_subset(ds).size(), expected);
  EXPECT_EQ(expected, 80U);
}

TEST(ScorePredictions, NoEligibleExamples) {
  BinaryMask t(4, 4);
  t.set(1, 1);
  const std::vector<RISExample> ds{bare_example(t, {})};
  const std::vector<BinaryMask> preds{BinaryMask(4, 4)};
  const MetricReport r = score_predictions(preds, ds, true);
  EXPECT_FALSE(r.nta_iou.has_value());
  EXPECT_EQ(r.n_nta_eligible, 0U);
  EXPECT_EQ(r.miou, 0.0);
  for (const auto& [x, v] : r.prec_at) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace refseg
