#include "refseg/metrics.hpp"

#include "refseg/error.hpp"

namespace refseg {

void EvalRecord::validate() const {
  if (!prediction.same_shape(target_gt) || !prediction.same_shape(cocategory_gt)) {
    throw InvalidInput("EvalRecord: mask dimensions disagree");
  }
  if (!target_gt.subset_of(cocategory_gt)) throw InvalidInput("EvalRecord: target GT not inside co-category GT");
}

std::optional<double> nta_iou(const EvalRecord& rec) {
  rec.validate();
  const BinaryMask wrong = rec.prediction - rec.target_gt;
  const BinaryMask nontarget = rec.cocategory_gt - rec.target_gt;
  const std::size_t uni = (wrong | nontarget).area();
  if (uni == 0) return std::nullopt;
  return static_cast<double>((wrong & nontarget).area()) / static_cast<double>(uni);
}

namespace {

void check_pairs(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  if (preds.empty()) throw InvalidInput("metrics: empty prediction list");
  if (preds.size() != gts.size()) throw InvalidInput("metrics: prediction/ground-truth count mismatch");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].same_shape(gts[i])) throw InvalidInput("metrics: dimension mismatch at pair " + std::to_string(i));
  }
}

struct Counts {
  std::size_t inter = 0;
  std::size_t uni = 0;
};

Counts count(const BinaryMask& a, const BinaryMask& b) {
  Counts c;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    c.inter += static_cast<std::size_t>(ab[i] & bb[i]);
    c.uni += static_cast<std::size_t>(ab[i] | bb[i]);
  }
  return c;
}

}  // namespace

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt)) throw InvalidInput("iou: dimension mismatch");
  const Counts c = count(pred, gt);
  return c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

double oiou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  check_pairs(preds, gts);
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Counts c = count(preds[i], gts[i]);
    inter += c.inter;
    uni += c.uni;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  check_pairs(preds, gts);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += iou(preds[i], gts[i]);
  return sum / static_cast<double>(preds.size());
}

std::map<double, double> precision_at(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
                                      std::span<const double> thresholds) {
  check_pairs(preds, gts);
  for (double x : thresholds) {
    if (!(x > 0.0 && x < 1.0)) throw InvalidInput("precision_at: thresholds must lie in (0, 1)");
  }
  std::vector<double> ious;
  ious.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) ious.push_back(iou(preds[i], gts[i]));
  std::map<double, double> out;
  for (double x : thresholds) {
    std::size_t hits = 0;
    for (double v : ious) hits += v > x ? 1 : 0;
    out[x] = 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
  }
  return out;
}

std::vector<NtaTemplate> build_nta_subset(std::span<const RISExample> dataset) {
  std::vector<NtaTemplate> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const RISExample& ex = dataset[i];
    if (ex.sibling_masks.empty()) continue;
    NtaTemplate t;
    t.example_index = i;
    t.target_gt = ex.target_mask;
    t.cocategory_gt = ex.target_mask;
    for (const auto& s : ex.sibling_masks) t.cocategory_gt = t.cocategory_gt | s;
    out.push_back(std::move(t));
  }
  return out;
}

MetricReport score_predictions(std::span<const BinaryMask> preds, std::span<const RISExample> examples,
                               bool with_nta) {
  if (preds.size() != examples.size()) throw InvalidInput("score_predictions: prediction/example count mismatch");
  std::vector<BinaryMask> gts;
  gts.reserve(examples.size());
  for (const auto& ex : examples) gts.push_back(ex.target_mask);

  MetricReport r;
  r.n_examples = preds.size();
  r.oiou = oiou(preds, gts);
  r.miou = miou(preds, gts);
  r.prec_at = precision_at(preds, gts, kDefaultPrecisionThresholds);
  if (with_nta) {
    const auto subset = build_nta_subset(examples);
    r.n_nta_eligible = subset.size();
    double sum = 0.0;
    for (const auto& t : subset) {
      const auto v = nta_iou(EvalRecord{preds[t.example_index], t.target_gt, t.cocategory_gt});
      if (!v) continue;
      sum += *v;
      ++r.n_nta_defined;
    }
    if (r.n_nta_defined > 0) r.nta_iou = sum / static_cast<double>(r.n_nta_defined);
  }
  return r;
}

}  // namespace refseg
