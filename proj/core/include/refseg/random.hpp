#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "refseg/autograd.hpp"

namespace refseg {

using Rng = std::mt19937_64;

/// Independent substream seed for (seed, stream) via the splitmix64 finaliser.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

/// Incremental FNV-1a 64.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes);
  void update(const Matrix& m);
  std::uint64_t digest() const noexcept { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace refseg
