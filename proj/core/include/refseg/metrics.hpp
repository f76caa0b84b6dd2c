#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "refseg/datamodel.hpp"

namespace refseg {

/// Inputs of the non-target activation metric for one referring expression.
struct EvalRecord {
  BinaryMask prediction;     ///< predicted mask for the referred object
  BinaryMask target_gt;      ///< ground truth of the referred object
  BinaryMask cocategory_gt;  ///< union of every same-category ground truth, target included

  /// Dimensions agree and target_gt is contained in cocategory_gt.
  void validate() const;
};

/// |W & S| / |W | S| with W = prediction minus target (wrongly predicted
/// pixels) and S = cocategory minus target (non-target same-category pixels).
/// Empty W and S give std::nullopt; such records are left out of aggregates.
std::optional<double> nta_iou(const EvalRecord& rec);

/// Per-pair IoU. Two empty masks count as a perfect match (1.0).
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// Summed intersections over summed unions.
double oiou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);
/// Mean of per-pair IoU.
double miou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);
/// Percentage (0-100) of pairs whose IoU is strictly greater than each threshold.
std::map<double, double> precision_at(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
                                      std::span<const double> thresholds);

inline constexpr double kDefaultPrecisionThresholds[] = {0.5, 0.7, 0.9};

/// Dataset entry eligible for the NTA metric; `prediction` is filled in later.
struct NtaTemplate {
  std::size_t example_index = 0;
  BinaryMask target_gt;
  BinaryMask cocategory_gt;
};

/// Keeps the examples whose image holds at least two instances of the target's
/// category and builds their co-category ground truth.
std::vector<NtaTemplate> build_nta_subset(std::span<const RISExample> dataset);

struct MetricReport {
  std::optional<double> nta_iou;  ///< mean over defined records; nullopt when none
  double oiou = 0.0;
  double miou = 0.0;
  std::map<double, double> prec_at;
  std::size_t n_examples = 0;
  std::size_t n_nta_eligible = 0;
  std::size_t n_nta_defined = 0;
};

/// Scores predictions aligned index-by-index with `examples`.
MetricReport score_predictions(std::span<const BinaryMask> preds, std::span<const RISExample> examples,
                               bool with_nta);

}  // namespace refseg
