#pragma once

// Affinity-consistency and prototype-contrastive objectives plus the
// multi-layer fusion that feeds the decoder.

#include <span>
#include <vector>

#include "refseg/autograd.hpp"
#include "refseg/config.hpp"
#include "refseg/datamodel.hpp"
#include "refseg/random.hpp"

namespace refseg {

/// Row-stochastic N x N map.
class AffinityMap {
 public:
  AffinityMap() = default;
  /// Throws InvalidInput unless square, non-negative and each row sums to 1 within 1e-6.
  explicit AffinityMap(Matrix data);
  const Matrix& data() const noexcept { return data_; }

 private:
  Matrix data_;
};

/// Tunable parts shared by the fusion and the contrastive objective.
struct TlmParams {
  Parameter sentence_proj;  ///< D_t x D, maps the sentence vector into vision space
  Parameter sentence_bias;  ///< 1 x D
  Parameter reduce_w;       ///< (layers * D) x D channel reduction
  Parameter reduce_b;       ///< 1 x D

  TlmParams() = default;
  TlmParams(int vision_dim, int text_dim, int fused_layers, Rng& rng);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

namespace tlm {

/// fv fs^T: one scalar per token (N_v x 1). `fs` is 1 x D.
ag::Var text_augment(ag::Tape& t, ag::Var fv, ag::Var fs);
Matrix text_augment(const FeatureMatrix& fv, const Matrix& fs);

/// softmax_rows(x x^T / ||x||_F^2); an all-zero x uses divisor 1, which gives uniform rows.
ag::Var affinity(ag::Tape& t, ag::Var x);
AffinityMap affinity(const Matrix& x);

/// Sum over layers of ||(J - A(fv)) * stopgrad(A(fv fs^T))||_F^2.
ag::Var cpcl_loss(ag::Tape& t, std::span<const ag::Var> layer_features, ag::Var fs);
double cpcl_loss(std::span<const FeatureMatrix> layer_features, const Matrix& fs);
/// The same sum from precomputed affinity maps, for closed-form checks.
double cpcl_from_maps(std::span<const AffinityMap> visual, std::span<const AffinityMap> text_augmented);

/// Scales every token row by its cosine with fs, then concatenates the layers along channels.
ag::Var reweight_and_concat(ag::Tape& t, std::span<const ag::Var> layer_features, ag::Var fs);
FeatureMatrix reweight_and_concat(std::span<const FeatureMatrix> layer_features, const Matrix& fs);

/// Channel reduction of the fused features (N_v x D), shared with the decoder input.
ag::Var reduce(ag::Tape& t, ag::Var fused, ag::Var w, ag::Var b);
/// Mean over tokens: 1 x D.
ag::Var prototype(ag::Tape& t, ag::Var reduced);
Matrix prototype(const FeatureMatrix& fused, const TlmParams& params);

/// -log softmax over [cos(p, pos), cos(p, neg_1), ...] at the positive entry; zero when there are
/// no negatives.
ag::Var tccl_loss(ag::Tape& t, ag::Var prototype, ag::Var positive, std::span<const ag::Var> negatives);
double tccl_loss(const Matrix& prototype, const Matrix& positive, std::span<const Matrix> negatives);
/// The same loss from raw similarity scores.
double tccl_from_scores(double positive_score, std::span<const double> negative_scores);

}  // namespace tlm
}  // namespace refseg
