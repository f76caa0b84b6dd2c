#include "refseg/datamodel.hpp"

#include <algorithm>
#include <cmath>

#include "refseg/error.hpp"

namespace refseg {

bool all_finite(const Matrix& m) { return m.allFinite(); }

FeatureMatrix::FeatureMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) throw InvalidInput("FeatureMatrix: empty shape");
  if (!data_.allFinite()) throw InvalidInput("FeatureMatrix: non-finite entry");
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidInput("BinaryMask: negative dimension");
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t BinaryMask::area() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool BinaryMask::subset_of(const BinaryMask& outer) const {
  if (!same_shape(outer)) throw InvalidInput("BinaryMask::subset_of: dimension mismatch");
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] && !outer.bits_[i]) return false;
  }
  return true;
}

BinaryMask mask_op(const BinaryMask& a, const BinaryMask& b, MaskOp op) {
  if (!a.same_shape(b)) {
    throw InvalidInput("mask_op: dimension mismatch " + std::to_string(a.width()) + "x" +
                       std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                       std::to_string(b.height()));
  }
  BinaryMask out(a.width(), a.height());
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    bool v = false;
    switch (op) {
      case MaskOp::Intersect: v = ab[i] && bb[i]; break;
      case MaskOp::Union: v = ab[i] || bb[i]; break;
      case MaskOp::Minus: v = ab[i] && !bb[i]; break;
    }
    out.set_index(i, v);
  }
  return out;
}

TokenSequence pad_tokens(std::span<const std::int32_t> tokens, std::size_t length) {
  TokenSequence out(length, kPadToken);
  std::copy_n(tokens.begin(), std::min(length, tokens.size()), out.begin());
  return out;
}

void RISExample::validate() const {
  if (image.height <= 0 || image.width <= 0 || image.channels <= 0) throw InvalidInput("RISExample: empty image");
  if (image.data.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw InvalidInput("RISExample: image buffer size mismatch");
  }
  if (target_mask.width() != image.width || target_mask.height() != image.height) {
    throw InvalidInput("RISExample: target mask does not match image dimensions");
  }
  for (const auto& s : sibling_masks) {
    if (!s.same_shape(target_mask)) throw InvalidInput("RISExample: sibling mask dimension mismatch");
    if (!(s & target_mask).empty()) throw InvalidInput("RISExample: sibling mask overlaps target");
  }
}

void LossWeights::validate() const {
  if (!std::isfinite(lambda_cpcl) || !std::isfinite(lambda_tccl) || lambda_cpcl < 0 || lambda_tccl < 0) {
    throw InvalidInput("LossWeights: coefficients must be finite and non-negative");
  }
}

}  // namespace refseg
