#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "refseg/autograd.hpp"

namespace refseg {

/// tokens x channels block of finite reals. Shared currency between the
/// encoders, the aggregator and the losses.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  /// Throws InvalidInput on an empty shape or a non-finite entry.
  explicit FeatureMatrix(Matrix data);

  const Matrix& data() const noexcept { return data_; }
  Eigen::Index tokens() const noexcept { return data_.rows(); }
  Eigen::Index channels() const noexcept { return data_.cols(); }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) { return a.data_ == b.data_; }

 private:
  Matrix data_;
};

bool all_finite(const Matrix& m);

enum class MaskOp { Intersect, Union, Minus };

/// height x width boolean grid, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixels() const noexcept { return bits_.size(); }

  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v = true) { bits_[index(x, y)] = v ? 1 : 0; }
  bool at_index(std::size_t i) const { return bits_[i] != 0; }
  void set_index(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

  std::size_t area() const noexcept;
  bool empty() const noexcept { return area() == 0; }
  bool same_shape(const BinaryMask& o) const noexcept { return width_ == o.width_ && height_ == o.height_; }
  /// True when every set pixel of *this is also set in `outer`.
  bool subset_of(const BinaryMask& outer) const;

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Pointwise set algebra; throws InvalidInput on a dimension mismatch.
BinaryMask mask_op(const BinaryMask& a, const BinaryMask& b, MaskOp op);

inline BinaryMask operator&(const BinaryMask& a, const BinaryMask& b) { return mask_op(a, b, MaskOp::Intersect); }
inline BinaryMask operator|(const BinaryMask& a, const BinaryMask& b) { return mask_op(a, b, MaskOp::Union); }
inline BinaryMask operator-(const BinaryMask& a, const BinaryMask& b) { return mask_op(a, b, MaskOp::Minus); }

/// H x W x C image stored as interleaved floats.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0F) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

using TokenSequence = std::vector<std::int32_t>;
inline constexpr std::int32_t kPadToken = 0;

/// Pads with kPadToken or truncates to exactly `length` tokens.
TokenSequence pad_tokens(std::span<const std::int32_t> tokens, std::size_t length);

/// One referring-segmentation training record.
struct RISExample {
  Image image;
  TokenSequence positive_text;
  std::vector<TokenSequence> negative_texts;
  BinaryMask target_mask;
  /// Same-category instances other than the target.
  std::vector<BinaryMask> sibling_masks;
  int category_id = 0;

  /// Throws InvalidInput unless all masks match the image and siblings are disjoint from the target.
  void validate() const;

  friend bool operator==(const RISExample&, const RISExample&) = default;
};

/// Per-channel residual scale (the diagonal of a D x D matrix).
struct RescaleDiagonal {
  std::vector<double> values;
};

struct LossWeights {
  double lambda_cpcl = 0.1;
  double lambda_tccl = 0.1;

  void validate() const;
};

}  // namespace refseg
