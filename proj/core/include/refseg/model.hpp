#pragma once

// Frozen encoders plus the tunable adapter, fusion and decoder, wired end to end.

#include <memory>
#include <span>
#include <vector>

#include "refseg/autograd.hpp"
#include "refseg/config.hpp"
#include "refseg/datamodel.hpp"
#include "refseg/encoders.hpp"
#include "refseg/objective.hpp"
#include "refseg/rca.hpp"
#include "refseg/tlm.hpp"

namespace refseg {

/// Per-example frozen computations, cached once so training only replays the tunable path.
struct PreparedExample {
  const RISExample* example = nullptr;
  TextFeatures positive;
  std::vector<TextFeatures> negatives;
  /// Vision feature after layer `start_layer`, the last one no adapter can influence.
  FeatureMatrix start_feature;
  int start_layer = 0;
  /// With adapters off: the frozen features at the fused layers, in configuration order.
  std::vector<FeatureMatrix> fused_layers;
  bool with_adapters = true;
  GroundTruthPartition target;
};

struct ParameterCounts {
  std::size_t frozen_vision = 0;
  std::size_t frozen_text = 0;
  std::size_t rca = 0;
  std::size_t tlm = 0;
  std::size_t decoder = 0;

  std::size_t frozen() const noexcept { return frozen_vision + frozen_text; }
  std::size_t tunable() const noexcept { return rca + tlm + decoder; }
};

class Model {
 public:
  /// Tunable weights are drawn from `init_seed`; frozen ones from the encoder seeds.
  Model(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const VisionEncoder& vision() const noexcept { return *vision_; }
  const TextEncoder& text() const noexcept { return *text_; }
  RcaStack& rca() noexcept { return *rca_; }
  const RcaStack& rca() const noexcept { return *rca_; }
  TlmParams& tlm() noexcept { return tlm_; }
  SegDecoder& decoder() noexcept { return *decoder_; }

  /// Every tunable parameter in a fixed order (checkpoints and the optimizer rely on it).
  std::vector<Parameter*> tunable_parameters();
  std::vector<const Parameter*> tunable_parameters() const;
  ParameterCounts parameter_counts() const;
  /// Combined checksum of both frozen encoders.
  std::uint64_t frozen_checksum() const;

  /// Throws InvalidInput when the example does not fit the encoders.
  PreparedExample prepare(const RISExample& ex, bool with_adapters) const;

  struct Forward {
    ag::Var pixel_logits;                 ///< (H * W) x 1
    ag::Var sentence;                     ///< 1 x D projected sentence vector
    ag::Var prototype;                    ///< 1 x D
    std::vector<ag::Var> fused_features;  ///< N_v x D at each fused layer
  };
  Forward forward(ag::Tape& t, const PreparedExample& ex);

  /// 1 x D projection of a frozen sentence vector.
  ag::Var project_sentence(ag::Tape& t, const Matrix& sentence);

  /// Inference with the positive expression only.
  Matrix predict_logits(const PreparedExample& ex);
  BinaryMask predict(const PreparedExample& ex);

 private:
  ModelConfig cfg_;
  std::unique_ptr<VisionEncoder> vision_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<RcaStack> rca_;
  TlmParams tlm_;
  std::unique_ptr<SegDecoder> decoder_;
};

}  // namespace refseg
