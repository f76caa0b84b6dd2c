#include "refseg/tlm.hpp"

#include <cmath>

#include "refseg/error.hpp"
#include "refseg/rca.hpp"

namespace refseg {

AffinityMap::AffinityMap(Matrix data) : data_(std::move(data)) {
  if (data_.rows() != data_.cols() || data_.size() == 0) throw InvalidInput("AffinityMap: must be square and nonempty");
  if (!all_finite(data_) || data_.minCoeff() < 0.0) throw InvalidInput("AffinityMap: negative or non-finite entry");
  for (Eigen::Index r = 0; r < data_.rows(); ++r) {
    if (std::abs(data_.row(r).sum() - 1.0) > 1e-6) throw InvalidInput("AffinityMap: row does not sum to 1");
  }
}

TlmParams::TlmParams(int vision_dim, int text_dim, int fused_layers, Rng& rng) {
  sentence_proj = Parameter("tlm.sentence_proj", random_normal(text_dim, vision_dim, 1.0 / std::sqrt(text_dim), rng));
  sentence_bias = Parameter("tlm.sentence_bias", Matrix::Zero(1, vision_dim));
  const int fused = fused_layers * vision_dim;
  reduce_w = Parameter("tlm.reduce_w", random_normal(fused, vision_dim, 1.0 / std::sqrt(fused), rng));
  reduce_b = Parameter("tlm.reduce_b", Matrix::Zero(1, vision_dim));
}

std::vector<Parameter*> TlmParams::parameters() { return {&sentence_proj, &sentence_bias, &reduce_w, &reduce_b}; }
std::vector<const Parameter*> TlmParams::parameters() const {
  return {&sentence_proj, &sentence_bias, &reduce_w, &reduce_b};
}

namespace tlm {

namespace {

void require_row(const Matrix& fs, Eigen::Index dim, const char* op) {
  if (fs.rows() != 1 || fs.cols() != dim) {
    throw InvalidInput(std::string(op) + ": sentence vector must be 1x" + std::to_string(dim));
  }
}

}  // namespace

ag::Var text_augment(ag::Tape& t, ag::Var fv, ag::Var fs) {
  require_row(t.value(fs), t.value(fv).cols(), "text_augment");
  return ag::matmul_nt(t, fv, fs);
}

Matrix text_augment(const FeatureMatrix& fv, const Matrix& fs) {
  ag::Tape t;
  return t.value(text_augment(t, t.constant_ref(fv.data()), t.constant_ref(fs)));
}

ag::Var affinity(ag::Tape& t, ag::Var x) {
  if (t.value(x).rows() < 1) throw InvalidInput("affinity: needs at least one row");
  const ag::Var gram = ag::matmul_nt(t, x, x);
  const ag::Var norm = ag::frobenius_sq(t, x);
  const ag::Var scaled = t.scalar(norm) > 0.0 ? ag::div_scalar(t, gram, norm) : gram;
  return ag::softmax_rows(t, scaled);
}

AffinityMap affinity(const Matrix& x) {
  ag::Tape t;
  return AffinityMap(t.value(affinity(t, t.constant_ref(x))));
}

ag::Var cpcl_loss(ag::Tape& t, std::span<const ag::Var> layer_features, ag::Var fs) {
  if (layer_features.empty()) throw ConfigError("cpcl_loss: no layer features");
  ag::Var total;
  for (const ag::Var fv : layer_features) {
    if (!fv.valid()) throw ConfigError("cpcl_loss: missing layer feature");
    const ag::Var vis = affinity(t, fv);
    const ag::Var ta = t.detach(affinity(t, text_augment(t, fv, fs)));
    const ag::Var gap = ag::affine(t, vis, -1.0, 1.0);
    const ag::Var term = ag::frobenius_sq(t, ag::mul(t, gap, ta));
    total = total.valid() ? ag::add(t, total, term) : term;
  }
  return total;
}

double cpcl_loss(std::span<const FeatureMatrix> layer_features, const Matrix& fs) {
  ag::Tape t;
  std::vector<ag::Var> vars;
  for (const auto& f : layer_features) vars.push_back(t.constant_ref(f.data()));
  return t.scalar(cpcl_loss(t, vars, t.constant_ref(fs)));
}

double cpcl_from_maps(std::span<const AffinityMap> visual, std::span<const AffinityMap> text_augmented) {
  if (visual.size() != text_augmented.size()) throw InvalidInput("cpcl_from_maps: layer count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < visual.size(); ++i) {
    const Matrix& v = visual[i].data();
    const Matrix& a = text_augmented[i].data();
    if (v.rows() != a.rows()) throw InvalidInput("cpcl_from_maps: map size mismatch");
    total += ((1.0 - v.array()) * a.array()).square().sum();
  }
  return total;
}

ag::Var reweight_and_concat(ag::Tape& t, std::span<const ag::Var> layer_features, ag::Var fs) {
  if (layer_features.empty()) throw ConfigError("reweight_and_concat: no layer features");
  const ag::Var fs_n = ag::row_normalize(t, fs, kCosineEps);
  std::vector<ag::Var> parts;
  parts.reserve(layer_features.size());
  for (const ag::Var fv : layer_features) {
    require_row(t.value(fs), t.value(fv).cols(), "reweight_and_concat");
    const ag::Var cos = ag::matmul_nt(t, ag::row_normalize(t, fv, kCosineEps), fs_n);
    parts.push_back(ag::mul_col(t, fv, cos));
  }
  return ag::concat_cols(t, parts);
}

FeatureMatrix reweight_and_concat(std::span<const FeatureMatrix> layer_features, const Matrix& fs) {
  ag::Tape t;
  std::vector<ag::Var> vars;
  for (const auto& f : layer_features) vars.push_back(t.constant_ref(f.data()));
  return FeatureMatrix(t.value(reweight_and_concat(t, vars, t.constant_ref(fs))));
}

ag::Var reduce(ag::Tape& t, ag::Var fused, ag::Var w, ag::Var b) {
  if (t.value(fused).cols() != t.value(w).rows()) throw InvalidInput("reduce: fused width does not match the map");
  return ag::add_row(t, ag::matmul(t, fused, w), b);
}

ag::Var prototype(ag::Tape& t, ag::Var reduced) { return ag::mean_rows(t, reduced); }

Matrix prototype(const FeatureMatrix& fused, const TlmParams& params) {
  ag::Tape t;
  const ag::Var r = reduce(t, t.constant_ref(fused.data()), t.constant_ref(params.reduce_w.value),
                           t.constant_ref(params.reduce_b.value));
  return t.value(prototype(t, r));
}

ag::Var tccl_loss(ag::Tape& t, ag::Var prototype, ag::Var positive, std::span<const ag::Var> negatives) {
  const auto dim = t.value(prototype).cols();
  require_row(t.value(prototype), dim, "tccl_loss");
  require_row(t.value(positive), dim, "tccl_loss");
  if (negatives.empty()) return t.constant(Matrix::Zero(1, 1));
  const ag::Var p = ag::row_normalize(t, prototype, kCosineEps);
  std::vector<ag::Var> scores;
  scores.reserve(negatives.size() + 1);
  scores.push_back(ag::matmul_nt(t, p, ag::row_normalize(t, positive, kCosineEps)));
  for (const ag::Var n : negatives) {
    require_row(t.value(n), dim, "tccl_loss");
    scores.push_back(ag::matmul_nt(t, p, ag::row_normalize(t, n, kCosineEps)));
  }
  return ag::cross_entropy_row(t, ag::concat_cols(t, scores), 0);
}

double tccl_loss(const Matrix& prototype, const Matrix& positive, std::span<const Matrix> negatives) {
  ag::Tape t;
  std::vector<ag::Var> negs;
  for (const auto& n : negatives) negs.push_back(t.constant_ref(n));
  return t.scalar(tccl_loss(t, t.constant_ref(prototype), t.constant_ref(positive), negs));
}

double tccl_from_scores(double positive_score, std::span<const double> negative_scores) {
  if (negative_scores.empty()) return 0.0;
  ag::Tape t;
  Matrix row(1, static_cast<Eigen::Index>(negative_scores.size() + 1));
  row(0, 0) = positive_score;
  for (std::size_t k = 0; k < negative_scores.size(); ++k) row(0, static_cast<Eigen::Index>(k + 1)) = negative_scores[k];
  return t.scalar(ag::cross_entropy_row(t, t.constant(std::move(row)), 0));
}

}  // namespace tlm
}  // namespace refseg
