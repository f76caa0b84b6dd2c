#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "refseg/autograd.hpp"
#include "refseg/datamodel.hpp"
#include "refseg/random.hpp"

namespace refseg::testing {

/// Scalar-valued graph built from trainable leaves.
using ScalarFn = std::function<ag::Var(ag::Tape&, std::span<const ag::Var>)>;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every input entry.
/// Numeric gradients use central differences with step h.
inline double max_relative_grad_error(const ScalarFn& f, std::vector<Matrix> inputs, double h = 1e-5,
                                      double floor = 1e-6) {
  std::vector<Parameter> params;
  params.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace_back("x" + std::to_string(i), inputs[i]);

  auto evaluate = [&](bool grad) {
    ag::Tape t;
    std::vector<ag::Var> vars;
    for (auto& p : params) vars.push_back(t.param(p));
    const ag::Var out = f(t, vars);
    if (grad) t.backward(out);
    return t.scalar(out);
  };

  for (auto& p : params) p.zero_grad();
  evaluate(true);

  double worst = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p.grad;
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double saved = p.value.data()[k];
      p.value.data()[k] = saved + h;
      const double up = evaluate(false);
      p.value.data()[k] = saved - h;
      const double down = evaluate(false);
      p.value.data()[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  return random_normal(rows, cols, stddev, rng);
}

inline BinaryMask random_mask(int w, int h, double p, Rng& rng) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(w, h);
  for (std::size_t i = 0; i < m.pixels(); ++i) m.set_index(i, bit(rng));
  return m;
}

// Pixel-loop oracles, written without the mask algebra under test.

inline std::optional<double> nta_oracle(const BinaryMask& pred, const BinaryMask& target, const BinaryMask& cocat) {
  long inter = 0;
  long uni = 0;
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      const bool wrong = pred.at(x, y) && !target.at(x, y);
      const bool other = cocat.at(x, y) && !target.at(x, y);
      inter += (wrong && other) ? 1 : 0;
      uni += (wrong || other) ? 1 : 0;
    }
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::pair<long, long> inter_union_oracle(const BinaryMask& a, const BinaryMask& b) {
  long inter = 0;
  long uni = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      inter += (a.at(x, y) && b.at(x, y)) ? 1 : 0;
      uni += (a.at(x, y) || b.at(x, y)) ? 1 : 0;
    }
  }
  return {inter, uni};
}

inline double iou_oracle(const BinaryMask& a, const BinaryMask& b) {
  const auto [i, u] = inter_union_oracle(a, b);
  return u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
}

}  // namespace refseg::testing
