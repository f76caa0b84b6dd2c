#pragma once

// Frozen, seeded stand-ins for the pretrained vision and text backbones.
// Weights are drawn once from the configured seed and never updated.

#include <span>
#include <vector>

#include "refseg/autograd.hpp"
#include "refseg/config.hpp"
#include "refseg/datamodel.hpp"

namespace refseg {

/// Pre-norm residual MLP block: x + W2 gelu(W1 LN(x) + b1) + b2.
struct FrozenBlock {
  Parameter ln_gain, ln_bias, w1, b1, w2, b2;

  ag::Var forward(ag::Tape& t, ag::Var x) const;
};

class VisionEncoder {
 public:
  explicit VisionEncoder(const VisionConfig& cfg);

  const VisionConfig& config() const noexcept { return cfg_; }
  int layers() const noexcept { return cfg_.layers; }
  int dim() const noexcept { return cfg_.dim; }
  int tokens() const noexcept { return cfg_.tokens(); }

  /// Row p holds patch p (row-major over the patch grid) flattened as (y, x, c).
  Matrix patchify(const Image& img) const;
  /// Patch embedding plus positional embedding: the input of layer 1.
  FeatureMatrix embed(const Image& img) const;
  ag::Var embed(ag::Tape& t, const Image& img) const;

  /// Layer i (1-based) applied to `x`. Throws InvalidInput if i is out of range.
  FeatureMatrix layer(int i, const FeatureMatrix& x) const;
  ag::Var layer(ag::Tape& t, int i, ag::Var x) const;

  /// Plain frozen forward; element i is the output of layer i (element 0 is the embedding).
  std::vector<FeatureMatrix> forward_all(const Image& img) const;

  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;

 private:
  VisionConfig cfg_;
  Parameter patch_w_, patch_b_, pos_;
  std::vector<FrozenBlock> blocks_;
};

struct TextFeatures {
  /// L x D_t; rows after the last content token are zero.
  FeatureMatrix tokens;
  /// 1 x D_t output at the last content position (the end-of-sequence stand-in).
  Matrix sentence;
  /// Number of positions up to and including the last content token.
  int length = 0;
};

class TextEncoder {
 public:
  explicit TextEncoder(const TextConfig& cfg);

  const TextConfig& config() const noexcept { return cfg_; }
  int dim() const noexcept { return cfg_.dim; }
  int length() const noexcept { return cfg_.len; }

  /// `tokens` is padded to the configured length (longer input is rejected).
  /// Throws InvalidInput for all-padding input or out-of-vocabulary ids.
  TextFeatures encode(std::span<const std::int32_t> tokens) const;

  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;

 private:
  TextConfig cfg_;
  Parameter embedding_, pos_;
  std::vector<FrozenBlock> blocks_;
  Parameter final_gain_, final_bias_;
  Matrix causal_mean_;
};

}  // namespace refseg
