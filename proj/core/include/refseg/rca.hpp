#pragma once

// Cost-volume adapter inserted between frozen vision layers.

#include <functional>
#include <span>
#include <vector>

#include "refseg/autograd.hpp"
#include "refseg/config.hpp"
#include "refseg/datamodel.hpp"
#include "refseg/encoders.hpp"
#include "refseg/random.hpp"

namespace refseg {

inline constexpr double kCosineEps = 1e-8;

/// N_v x N_t rectified cosine matching scores, every entry in [0, 1].
class CostVolume {
 public:
  CostVolume() = default;
  /// Throws InvalidInput if an entry falls outside [0, 1 + 1e-6] or is not finite.
  explicit CostVolume(Matrix data);
  const Matrix& data() const noexcept { return data_; }

 private:
  Matrix data_;
};

/// Tunable state of one adapter placed after vision layer `layer_index`.
struct RcaBlock {
  int layer_index = 0;
  Parameter vision_proj;  ///< D x D'
  Parameter text_proj;    ///< D_t x D'
  Parameter expand_w;     ///< N_t x D
  Parameter expand_b;     ///< 1 x D
  Parameter rescale;      ///< 1 x D, the diagonal of the residual scale
  Parameter reduce;       ///< 2D x D for the concatenating variants, empty otherwise

  RcaBlock() = default;
  RcaBlock(int layer, int vision_dim, int text_dim, int text_len, const RcaConfig& cfg, Rng& rng);

  RescaleDiagonal rescale_diagonal() const;
  void set_rescale(const RescaleDiagonal& d);
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

namespace rca {

/// max(0, cos(fv_a, ft_b)) for every token pair; each norm is guarded by kCosineEps.
ag::Var cost_volume(ag::Tape& t, ag::Var fv_proj, ag::Var ft_proj);
CostVolume cost_volume(const FeatureMatrix& fv_proj, const FeatureMatrix& ft_proj);

/// (c W + b) elementwise-times fv_raw: each cost row is mapped from N_t to D channels.
ag::Var semantic_mask(ag::Tape& t, ag::Var cost, ag::Var fv_raw, ag::Var expand_w, ag::Var expand_b);
FeatureMatrix semantic_mask(const CostVolume& c, const FeatureMatrix& fv_raw, const RcaBlock& block);

using LayerFn = std::function<ag::Var(ag::Var)>;

/// Combines the next frozen layer with the text-referred feature `fvt` according to `variant`.
/// `rescale` is 1 x D; `reduce` is only read by the concatenating variants.
ag::Var residual_inject(ag::Tape& t, RcaVariant variant, ag::Var fv_in, ag::Var fvt, ag::Var rescale,
                        ag::Var reduce, const LayerFn& next_layer);
FeatureMatrix residual_inject(const FeatureMatrix& fv_in, const FeatureMatrix& fvt, const RcaBlock& block,
                              RcaVariant variant, const VisionEncoder& encoder);

}  // namespace rca

/// Throws ConfigError unless every index lies in [1, layers - 1] and the list is strictly increasing.
void validate_rca_layers(std::span<const int> layers, int vision_layers);

/// Vision stack with adapters. Output element i is the feature after layer i.
class RcaStack {
 public:
  RcaStack(const VisionEncoder& encoder, const TextEncoder& text, const RcaConfig& cfg, Rng& rng);

  const RcaConfig& config() const noexcept { return cfg_; }
  std::span<RcaBlock> blocks() noexcept { return blocks_; }
  std::span<const RcaBlock> blocks() const noexcept { return blocks_; }
  /// First layer whose output feeds an adapter, or the encoder depth when there are none.
  int first_layer() const noexcept;

  /// Runs layers start+1..L from `start_feature` (the output of layer `start`, 0 meaning the
  /// embedding). Adapters are applied when `enabled`. Element i of the result is the feature
  /// after layer i; elements below `start` are invalid.
  std::vector<ag::Var> forward(ag::Tape& t, int start, ag::Var start_feature, ag::Var text_tokens,
                               bool enabled);
  std::vector<FeatureMatrix> forward(const Image& img, const TextFeatures& text, bool enabled);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  const VisionEncoder* encoder_;
  RcaConfig cfg_;
  std::vector<RcaBlock> blocks_;
};

}  // namespace refseg
