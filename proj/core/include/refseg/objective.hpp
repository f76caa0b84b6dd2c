#pragma once

// Segmentation decoder, pixel-text loss and the combined objective.

#include <cstdint>
#include <span>
#include <vector>

#include "refseg/autograd.hpp"
#include "refseg/config.hpp"
#include "refseg/datamodel.hpp"
#include "refseg/random.hpp"

namespace refseg {

inline constexpr double kLogitClamp = 30.0;

/// Pixel labels: 1 for the referred region, 0 elsewhere. Row-major over the mask grid.
struct GroundTruthPartition {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  static GroundTruthPartition from_mask(const BinaryMask& mask);
  std::vector<std::size_t> positives() const;
  std::vector<std::size_t> negatives() const;
};

/// Per-pixel features at mask resolution and the paired text vector.
struct SegFeatures {
  int width = 0;
  int height = 0;
  Matrix pixels;  ///< (height * width) x D
  Matrix text;    ///< 1 x D

  /// (height * width) x 1 dot products with the text vector.
  Matrix logits() const;
};

/// Bilinear interpolation weights (half-pixel centres, edge clamped) from a grid_h x grid_w
/// grid to out_h x out_w, as an (out_h * out_w) x (grid_h * grid_w) matrix.
Matrix bilinear_upsample_matrix(int grid_h, int grid_w, int out_h, int out_w);

/// Transformer decoder: patch tokens query the projected text tokens, then a linear head
/// gives per-patch features that are upsampled to the mask grid.
class SegDecoder {
 public:
  SegDecoder(const ModelConfig& cfg, Rng& rng);

  struct Output {
    ag::Var patch_features;  ///< N_v x D
    ag::Var text_vector;     ///< 1 x D
    ag::Var pixel_logits;    ///< (H * W) x 1
  };

  /// `text_length` marks the content prefix of `text_tokens`; later rows are ignored.
  Output forward(ag::Tape& t, ag::Var visual, ag::Var text_tokens, int text_length, ag::Var sentence);
  SegFeatures decode(const FeatureMatrix& visual, const FeatureMatrix& text_tokens, int text_length,
                     const Matrix& sentence);

  const Matrix& upsample() const noexcept { return upsample_; }
  int mask_width() const noexcept { return mask_size_; }
  int mask_height() const noexcept { return mask_size_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  struct Block {
    Parameter ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  DecoderConfig cfg_;
  int dim_ = 0;
  int mask_size_ = 0;
  Parameter memory_proj_;  ///< D_t x D
  Parameter text_proj_, text_bias_;
  Parameter head_w_, head_b_;
  std::vector<Block> blocks_;
  Matrix upsample_;
};

/// Mean over pixels of the binary cross-entropy of sigmoid(logit), logits clamped to +-kLogitClamp.
ag::Var dis_loss(ag::Tape& t, ag::Var pixel_logits, const GroundTruthPartition& gt);
double dis_loss(const SegFeatures& seg, const GroundTruthPartition& gt);
double dis_loss_from_logits(const Matrix& pixel_logits, const GroundTruthPartition& gt);

ag::Var total_loss(ag::Tape& t, ag::Var dis, ag::Var cpcl, ag::Var tccl, const LossWeights& w);
double total_loss(double dis, double cpcl, double tccl, const LossWeights& w);

/// Pixel set iff sigmoid(logit) > threshold.
BinaryMask predict_mask(const Matrix& pixel_logits, int width, int height, double threshold = 0.5);
BinaryMask predict_mask(const SegFeatures& seg, double threshold = 0.5);

}  // namespace refseg
