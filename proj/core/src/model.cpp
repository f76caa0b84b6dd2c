#include "refseg/model.hpp"

#include <algorithm>

#include "refseg/error.hpp"
#include "refseg/random.hpp"

namespace refseg {

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  for (int l : cfg.tlm.cpcl_layers) {
    if (l < 1 || l > cfg.vision.layers) {
      throw ConfigError("tlm.cpcl_layers: index " + std::to_string(l) + " outside [1, " +
                        std::to_string(cfg.vision.layers) + "]");
    }
  }
  if (cfg.tlm.cpcl_layers.empty()) throw ConfigError("tlm.cpcl_layers: at least one layer is required");
  if (cfg.tlm.k_negatives < 0) throw ConfigError("tlm.k_negatives must be non-negative");
  if (!(cfg.predict_threshold > 0.0 && cfg.predict_threshold < 1.0)) {
    throw ConfigError("predict.threshold must lie in (0, 1)");
  }
  vision_ = std::make_unique<VisionEncoder>(cfg.vision);
  text_ = std::make_unique<TextEncoder>(cfg.text);
  Rng rng(derive_seed(init_seed, 1));
  rca_ = std::make_unique<RcaStack>(*vision_, *text_, cfg.rca, rng);
  tlm_ = TlmParams(cfg.vision.dim, cfg.text.dim, static_cast<int>(cfg.tlm.cpcl_layers.size()), rng);
  decoder_ = std::make_unique<SegDecoder>(cfg, rng);
}

std::vector<Parameter*> Model::tunable_parameters() {
  std::vector<Parameter*> ps = rca_->parameters();
  for (Parameter* p : tlm_.parameters()) ps.push_back(p);
  for (Parameter* p : decoder_->parameters()) ps.push_back(p);
  return ps;
}

std::vector<const Parameter*> Model::tunable_parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Model*>(this)->tunable_parameters()) out.push_back(p);
  return out;
}

ParameterCounts Model::parameter_counts() const {
  auto total = [](const auto& ps) {
    std::size_t n = 0;
    for (const Parameter* p : ps) n += p->size();
    return n;
  };
  ParameterCounts c;
  c.frozen_vision = vision_->parameter_count();
  c.frozen_text = text_->parameter_count();
  c.rca = total(rca_->parameters());
  c.tlm = total(tlm_.parameters());
  c.decoder = total(decoder_->parameters());
  return c;
}

std::uint64_t Model::frozen_checksum() const {
  Fnv1a h;
  for (const Parameter* p : vision_->parameters()) h.update(p->value);
  for (const Parameter* p : text_->parameters()) h.update(p->value);
  return h.digest();
}

PreparedExample Model::prepare(const RISExample& ex, bool with_adapters) const {
  PreparedExample p;
  p.example = &ex;
  p.with_adapters = with_adapters;
  p.positive = text_->encode(ex.positive_text);
  for (const auto& n : ex.negative_texts) p.negatives.push_back(text_->encode(n));
  if (ex.target_mask.width() != decoder_->mask_width() || ex.target_mask.height() != decoder_->mask_height()) {
    throw InvalidInput("prepare: mask size does not match the model's image size");
  }
  p.target = GroundTruthPartition::from_mask(ex.target_mask);

  const auto& fused = cfg_.tlm.cpcl_layers;
  const int first_fused = *std::min_element(fused.begin(), fused.end());
  const int last_needed =
      with_adapters ? std::min(rca_->first_layer(), first_fused) : *std::max_element(fused.begin(), fused.end());

  ag::Tape t;
  t.set_grad_enabled(false);
  ag::Var x = vision_->embed(t, ex.image);
  std::vector<ag::Var> feats{x};
  for (int i = 1; i <= last_needed; ++i) {
    x = vision_->layer(t, i, x);
    feats.push_back(x);
  }
  if (with_adapters) {
    p.start_layer = last_needed;
    p.start_feature = FeatureMatrix(t.value(feats[static_cast<std::size_t>(last_needed)]));
  } else {
    p.start_layer = last_needed;
    for (int l : fused) p.fused_layers.emplace_back(t.value(feats[static_cast<std::size_t>(l)]));
  }
  return p;
}

ag::Var Model::project_sentence(ag::Tape& t, const Matrix& sentence) {
  return ag::add_row(t, ag::matmul(t, t.constant_ref(sentence), t.param(tlm_.sentence_proj)),
                     t.param(tlm_.sentence_bias));
}

Model::Forward Model::forward(ag::Tape& t, const PreparedExample& ex) {
  Forward f;
  const ag::Var text_tokens = t.constant_ref(ex.positive.tokens.data());
  if (ex.with_adapters) {
    const auto feats = rca_->forward(t, ex.start_layer, t.constant_ref(ex.start_feature.data()), text_tokens, true);
    for (int l : cfg_.tlm.cpcl_layers) f.fused_features.push_back(feats[static_cast<std::size_t>(l)]);
  } else {
    for (const auto& m : ex.fused_layers) f.fused_features.push_back(t.constant_ref(m.data()));
  }
  f.sentence = project_sentence(t, ex.positive.sentence);
  const ag::Var fused = tlm::reweight_and_concat(t, f.fused_features, f.sentence);
  const ag::Var reduced = tlm::reduce(t, fused, t.param(tlm_.reduce_w), t.param(tlm_.reduce_b));
  f.prototype = tlm::prototype(t, reduced);
  const auto out = decoder_->forward(t, reduced, text_tokens, ex.positive.length, t.constant_ref(ex.positive.sentence));
  f.pixel_logits = out.pixel_logits;
  return f;
}

Matrix Model::predict_logits(const PreparedExample& ex) {
  ag::Tape t;
  t.set_grad_enabled(false);
  return t.value(forward(t, ex).pixel_logits);
}

BinaryMask Model::predict(const PreparedExample& ex) {
  return predict_mask(predict_logits(ex), decoder_->mask_width(), decoder_->mask_height(), cfg_.predict_threshold);
}

}  // namespace refseg
