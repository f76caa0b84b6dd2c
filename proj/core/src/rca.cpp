#include "refseg/rca.hpp"

#include <algorithm>
#include <cmath>

#include "refseg/error.hpp"

namespace refseg {

CostVolume::CostVolume(Matrix data) : data_(std::move(data)) {
  if (!all_finite(data_)) throw InvalidInput("CostVolume: non-finite entry");
  if (data_.size() > 0 && (data_.minCoeff() < 0.0 || data_.maxCoeff() > 1.0 + 1e-6)) {
    throw InvalidInput("CostVolume: entry outside [0, 1]");
  }
}

RcaBlock::RcaBlock(int layer, int vision_dim, int text_dim, int text_len, const RcaConfig& cfg, Rng& rng)
    : layer_index(layer) {
  const std::string prefix = "rca.layer" + std::to_string(layer) + ".";
  vision_proj = Parameter(prefix + "vision_proj",
                          random_normal(vision_dim, cfg.proj_dim, 1.0 / std::sqrt(vision_dim), rng));
  text_proj = Parameter(prefix + "text_proj", random_normal(text_dim, cfg.proj_dim, 1.0 / std::sqrt(text_dim), rng));
  expand_w = Parameter(prefix + "expand_w", random_normal(text_len, vision_dim, 1.0 / std::sqrt(text_len), rng));
  expand_b = Parameter(prefix + "expand_b", Matrix::Zero(1, vision_dim));
  rescale = Parameter(prefix + "rescale", Matrix::Constant(1, vision_dim, cfg.init_rescale));
  if (uses_reduce(cfg.variant)) {
    // [I; I] starts the concatenating variants at the plain sum.
    Matrix r(2 * vision_dim, vision_dim);
    r << Matrix::Identity(vision_dim, vision_dim), Matrix::Identity(vision_dim, vision_dim);
    reduce = Parameter(prefix + "reduce", std::move(r));
  }
}

RescaleDiagonal RcaBlock::rescale_diagonal() const {
  return RescaleDiagonal{std::vector<double>(rescale.value.data(), rescale.value.data() + rescale.value.size())};
}

void RcaBlock::set_rescale(const RescaleDiagonal& d) {
  if (static_cast<Eigen::Index>(d.values.size()) != rescale.value.cols()) {
    throw InvalidInput("RcaBlock: rescale length " + std::to_string(d.values.size()) + " != channel dim " +
                       std::to_string(rescale.value.cols()));
  }
  for (std::size_t k = 0; k < d.values.size(); ++k) rescale.value(0, static_cast<Eigen::Index>(k)) = d.values[k];
}

std::vector<Parameter*> RcaBlock::parameters() {
  std::vector<Parameter*> ps{&vision_proj, &text_proj, &expand_w, &expand_b, &rescale};
  if (reduce.size() > 0) ps.push_back(&reduce);
  return ps;
}

std::vector<const Parameter*> RcaBlock::parameters() const {
  std::vector<const Parameter*> ps{&vision_proj, &text_proj, &expand_w, &expand_b, &rescale};
  if (reduce.size() > 0) ps.push_back(&reduce);
  return ps;
}

namespace rca {

ag::Var cost_volume(ag::Tape& t, ag::Var fv_proj, ag::Var ft_proj) {
  if (t.value(fv_proj).cols() != t.value(ft_proj).cols()) throw InvalidInput("cost_volume: projected dims differ");
  const ag::Var a = ag::row_normalize(t, fv_proj, kCosineEps);
  const ag::Var b = ag::row_normalize(t, ft_proj, kCosineEps);
  return ag::relu(t, ag::matmul_nt(t, a, b));
}

CostVolume cost_volume(const FeatureMatrix& fv_proj, const FeatureMatrix& ft_proj) {
  ag::Tape t;
  const ag::Var c = cost_volume(t, t.constant_ref(fv_proj.data()), t.constant_ref(ft_proj.data()));
  // Rounding can push a self-cosine a hair above one.
  return CostVolume(t.value(c).cwiseMin(1.0));
}

ag::Var semantic_mask(ag::Tape& t, ag::Var cost, ag::Var fv_raw, ag::Var expand_w, ag::Var expand_b) {
  const Matrix& c = t.value(cost);
  const Matrix& w = t.value(expand_w);
  const Matrix& fv = t.value(fv_raw);
  if (c.cols() != w.rows() || w.cols() != fv.cols() || c.rows() != fv.rows()) {
    throw InvalidInput("semantic_mask: shape mismatch");
  }
  return ag::mul(t, ag::add_row(t, ag::matmul(t, cost, expand_w), expand_b), fv_raw);
}

FeatureMatrix semantic_mask(const CostVolume& c, const FeatureMatrix& fv_raw, const RcaBlock& block) {
  ag::Tape t;
  const ag::Var out = semantic_mask(t, t.constant_ref(c.data()), t.constant_ref(fv_raw.data()),
                                    t.constant_ref(block.expand_w.value), t.constant_ref(block.expand_b.value));
  return FeatureMatrix(t.value(out));
}

ag::Var residual_inject(ag::Tape& t, RcaVariant variant, ag::Var fv_in, ag::Var fvt, ag::Var rescale,
                        ag::Var reduce, const LayerFn& next_layer) {
  const Matrix& fv = t.value(fvt);
  if (fv.rows() != t.value(fv_in).rows() || fv.cols() != t.value(fv_in).cols()) {
    throw InvalidInput("residual_inject: feature shapes differ");
  }
  if (uses_rescale(variant) && (t.value(rescale).rows() != 1 || t.value(rescale).cols() != fv.cols())) {
    throw InvalidInput("residual_inject: rescale length " + std::to_string(t.value(rescale).size()) +
                       " != channel dim " + std::to_string(fv.cols()));
  }
  switch (variant) {
    case RcaVariant::ComposeOnly:
      return next_layer(fvt);
    case RcaVariant::ComposeRescaled:
      return ag::mul_row(t, next_layer(fvt), rescale);
    case RcaVariant::Concat:
    case RcaVariant::ConcatRescaled: {
      const Matrix& r = t.value(reduce);
      if (r.rows() != 2 * fv.cols() || r.cols() != fv.cols()) throw InvalidInput("residual_inject: reduce map shape");
      const ag::Var side = variant == RcaVariant::ConcatRescaled ? ag::mul_row(t, fvt, rescale) : fvt;
      const ag::Var parts[] = {next_layer(fv_in), side};
      return ag::matmul(t, ag::concat_cols(t, parts), reduce);
    }
    case RcaVariant::Add:
      return ag::add(t, next_layer(fv_in), fvt);
    case RcaVariant::AddRescaled:
      return ag::add(t, next_layer(fv_in), ag::mul_row(t, fvt, rescale));
  }
  throw InvalidInput("residual_inject: unknown variant");
}

FeatureMatrix residual_inject(const FeatureMatrix& fv_in, const FeatureMatrix& fvt, const RcaBlock& block,
                              RcaVariant variant, const VisionEncoder& encoder) {
  if (block.layer_index < 1 || block.layer_index >= encoder.layers()) {
    throw InvalidInput("residual_inject: block has no following layer");
  }
  ag::Tape t;
  const int next = block.layer_index + 1;
  const ag::Var reduce = block.reduce.size() > 0 ? t.constant_ref(block.reduce.value) : ag::Var{};
  const ag::Var out = residual_inject(t, variant, t.constant_ref(fv_in.data()), t.constant_ref(fvt.data()),
                                      t.constant_ref(block.rescale.value), reduce,
                                      [&](ag::Var x) { return encoder.layer(t, next, x); });
  return FeatureMatrix(t.value(out));
}

}  // namespace rca

void validate_rca_layers(std::span<const int> layers, int vision_layers) {
  int prev = 0;
  for (int l : layers) {
    if (l < 1 || l > vision_layers - 1) {
      throw ConfigError("rca.layers: index " + std::to_string(l) + " outside [1, " +
                        std::to_string(vision_layers - 1) + "]");
    }
    if (l <= prev) throw ConfigError("rca.layers: indices must be strictly increasing without duplicates");
    prev = l;
  }
}

RcaStack::RcaStack(const VisionEncoder& encoder, const TextEncoder& text, const RcaConfig& cfg, Rng& rng)
    : encoder_(&encoder), cfg_(cfg) {
  validate_rca_layers(cfg.layers, encoder.layers());
  if (cfg.proj_dim < 1) throw ConfigError("rca.proj_dim must be positive");
  for (int l : cfg.layers) blocks_.emplace_back(l, encoder.dim(), text.dim(), text.length(), cfg, rng);
}

int RcaStack::first_layer() const noexcept {
  return blocks_.empty() ? encoder_->layers() : blocks_.front().layer_index;
}

std::vector<ag::Var> RcaStack::forward(ag::Tape& t, int start, ag::Var start_feature, ag::Var text_tokens,
                                       bool enabled) {
  const int depth = encoder_->layers();
  if (start < 0 || start > depth) throw InvalidInput("RcaStack: start layer out of range");
  std::vector<ag::Var> feats(static_cast<std::size_t>(depth + 1));
  feats[static_cast<std::size_t>(start)] = start_feature;

  auto block_after = [&](int layer) -> RcaBlock* {
    if (!enabled) return nullptr;
    auto it = std::find_if(blocks_.begin(), blocks_.end(), [layer](const RcaBlock& b) { return b.layer_index == layer; });
    return it == blocks_.end() ? nullptr : &*it;
  };
  if (enabled && start > first_layer()) throw InvalidInput("RcaStack: start skips an adapter");

  ag::Var x = start_feature;
  int i = start;
  while (i < depth) {
    RcaBlock* b = i >= 1 ? block_after(i) : nullptr;
    if (b == nullptr) {
      x = encoder_->layer(t, i + 1, x);
    } else {
      const ag::Var fv_p = ag::matmul(t, x, t.param(b->vision_proj));
      const ag::Var ft_p = ag::matmul(t, text_tokens, t.param(b->text_proj));
      const ag::Var cost = rca::cost_volume(t, fv_p, ft_p);
      const ag::Var fvt = rca::semantic_mask(t, cost, x, t.param(b->expand_w), t.param(b->expand_b));
      const ag::Var reduce = b->reduce.size() > 0 ? t.param(b->reduce) : ag::Var{};
      const int next = i + 1;
      x = rca::residual_inject(t, cfg_.variant, x, fvt, t.param(b->rescale), reduce,
                               [&](ag::Var in) { return encoder_->layer(t, next, in); });
    }
    ++i;
    feats[static_cast<std::size_t>(i)] = x;
  }
  return feats;
}

std::vector<FeatureMatrix> RcaStack::forward(const Image& img, const TextFeatures& text, bool enabled) {
  ag::Tape t;
  t.set_grad_enabled(false);
  const auto vars = forward(t, 0, encoder_->embed(t, img), t.constant_ref(text.tokens.data()), enabled);
  std::vector<FeatureMatrix> out;
  out.reserve(vars.size());
  for (const ag::Var v : vars) out.emplace_back(t.value(v));
  return out;
}

std::vector<Parameter*> RcaStack::parameters() {
  std::vector<Parameter*> ps;
  for (auto& b : blocks_) {
    for (Parameter* p : b.parameters()) ps.push_back(p);
  }
  return ps;
}

std::vector<const Parameter*> RcaStack::parameters() const {
  std::vector<const Parameter*> ps;
  for (const auto& b : blocks_) {
    for (const Parameter* p : b.parameters()) ps.push_back(p);
  }
  return ps;
}

}  // namespace refseg
