#include "refseg/encoders.hpp"

#include <cmath>

#include "refseg/error.hpp"
#include "refseg/random.hpp"

namespace refseg {

namespace {

FrozenBlock make_block(const std::string& prefix, int dim, int hidden, Rng& rng) {
  FrozenBlock b;
  b.ln_gain = Parameter(prefix + ".ln_gain", Matrix::Ones(1, dim), false);
  b.ln_bias = Parameter(prefix + ".ln_bias", Matrix::Zero(1, dim), false);
  b.w1 = Parameter(prefix + ".w1", random_normal(dim, hidden, 1.0 / std::sqrt(dim), rng), false);
  b.b1 = Parameter(prefix + ".b1", random_normal(1, hidden, 0.1, rng), false);
  b.w2 = Parameter(prefix + ".w2", random_normal(hidden, dim, 0.5 / std::sqrt(hidden), rng), false);
  b.b2 = Parameter(prefix + ".b2", Matrix::Zero(1, dim), false);
  return b;
}

void hash_params(Fnv1a& h, const std::vector<const Parameter*>& ps) {
  for (const Parameter* p : ps) h.update(p->value);
}

}  // namespace

ag::Var FrozenBlock::forward(ag::Tape& t, ag::Var x) const {
  using namespace ag;
  Var h = layer_norm(t, x, t.constant_ref(ln_gain.value), t.constant_ref(ln_bias.value));
  h = add_row(t, matmul(t, h, t.constant_ref(w1.value)), t.constant_ref(b1.value));
  h = gelu(t, h);
  h = add_row(t, matmul(t, h, t.constant_ref(w2.value)), t.constant_ref(b2.value));
  return add(t, x, h);
}

// --- vision -------------------------------------------------------------------

VisionEncoder::VisionEncoder(const VisionConfig& cfg) : cfg_(cfg) {
  if (cfg.dim < 1 || cfg.layers < 1 || cfg.patch < 1 || cfg.hidden < 1 || cfg.channels < 1 ||
      cfg.image_size < cfg.patch || cfg.image_size % cfg.patch != 0) {
    throw InvalidInput("VisionEncoder: invalid configuration");
  }
  Rng rng(cfg.seed);
  const int patch_len = cfg.patch * cfg.patch * cfg.channels;
  patch_w_ = Parameter("vision.patch_w", random_normal(patch_len, cfg.dim, 1.0 / std::sqrt(patch_len), rng), false);
  patch_b_ = Parameter("vision.patch_b", random_normal(1, cfg.dim, 0.1, rng), false);
  pos_ = Parameter("vision.pos", random_normal(cfg.tokens(), cfg.dim, 0.5, rng), false);
  for (int i = 0; i < cfg.layers; ++i) {
    blocks_.push_back(make_block("vision.block" + std::to_string(i + 1), cfg.dim, cfg.hidden, rng));
  }
}

Matrix VisionEncoder::patchify(const Image& img) const {
  if (img.height != cfg_.image_size || img.width != cfg_.image_size || img.channels != cfg_.channels) {
    throw InvalidInput("VisionEncoder: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       "x" + std::to_string(img.channels) + ", encoder expects " +
                       std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) + "x" +
                       std::to_string(cfg_.channels));
  }
  const int g = cfg_.grid();
  const int p = cfg_.patch;
  Matrix out(g * g, p * p * cfg_.channels);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      const int row = gy * g + gx;
      int col = 0;
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          for (int c = 0; c < cfg_.channels; ++c) out(row, col++) = img.at(gy * p + y, gx * p + x, c);
        }
      }
    }
  }
  return out;
}

ag::Var VisionEncoder::embed(ag::Tape& t, const Image& img) const {
  using namespace ag;
  Var patches = t.constant(patchify(img));
  Var x = add_row(t, matmul(t, patches, t.constant_ref(patch_w_.value)), t.constant_ref(patch_b_.value));
  return add(t, x, t.constant_ref(pos_.value));
}

FeatureMatrix VisionEncoder::embed(const Image& img) const {
  ag::Tape t;
  return FeatureMatrix(t.value(embed(t, img)));
}

ag::Var VisionEncoder::layer(ag::Tape& t, int i, ag::Var x) const {
  if (i < 1 || i > cfg_.layers) {
    throw InvalidInput("VisionEncoder: layer index " + std::to_string(i) + " outside [1, " +
                       std::to_string(cfg_.layers) + "]");
  }
  const Matrix& xv = t.value(x);
  if (xv.rows() != cfg_.tokens() || xv.cols() != cfg_.dim) throw InvalidInput("VisionEncoder: input shape mismatch");
  return blocks_[static_cast<std::size_t>(i - 1)].forward(t, x);
}

FeatureMatrix VisionEncoder::layer(int i, const FeatureMatrix& x) const {
  ag::Tape t;
  return FeatureMatrix(t.value(layer(t, i, t.constant_ref(x.data()))));
}

std::vector<FeatureMatrix> VisionEncoder::forward_all(const Image& img) const {
  ag::Tape t;
  std::vector<FeatureMatrix> out;
  ag::Var x = embed(t, img);
  out.emplace_back(t.value(x));
  for (int i = 1; i <= cfg_.layers; ++i) {
    x = layer(t, i, x);
    out.emplace_back(t.value(x));
  }
  return out;
}

std::vector<const Parameter*> VisionEncoder::parameters() const {
  std::vector<const Parameter*> ps{&patch_w_, &patch_b_, &pos_};
  for (const auto& b : blocks_) {
    for (const Parameter* p : {&b.ln_gain, &b.ln_bias, &b.w1, &b.b1, &b.w2, &b.b2}) ps.push_back(p);
  }
  return ps;
}

std::size_t VisionEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

std::uint64_t VisionEncoder::checksum() const {
  Fnv1a h;
  hash_params(h, parameters());
  return h.digest();
}

// --- text ---------------------------------------------------------------------

TextEncoder::TextEncoder(const TextConfig& cfg) : cfg_(cfg) {
  if (cfg.dim < 1 || cfg.layers < 0 || cfg.len < 1 || cfg.vocab < 2 || cfg.hidden < 1) {
    throw InvalidInput("TextEncoder: invalid configuration");
  }
  Rng rng(cfg.seed);
  embedding_ = Parameter("text.embedding", random_normal(cfg.vocab, cfg.dim, 1.0, rng), false);
  pos_ = Parameter("text.pos", random_normal(cfg.len, cfg.dim, 0.3, rng), false);
  for (int i = 0; i < cfg.layers; ++i) {
    blocks_.push_back(make_block("text.block" + std::to_string(i + 1), cfg.dim, cfg.hidden, rng));
  }
  final_gain_ = Parameter("text.final_ln_gain", Matrix::Ones(1, cfg.dim), false);
  final_bias_ = Parameter("text.final_ln_bias", Matrix::Zero(1, cfg.dim), false);
  // Row a averages positions 0..a, so content rows never see later padding.
  causal_mean_ = Matrix::Zero(cfg.len, cfg.len);
  for (int a = 0; a < cfg.len; ++a) causal_mean_.row(a).head(a + 1).setConstant(1.0 / (a + 1));
}

TextFeatures TextEncoder::encode(std::span<const std::int32_t> tokens) const {
  if (tokens.size() > static_cast<std::size_t>(cfg_.len)) {
    throw InvalidInput("TextEncoder: sequence longer than text.len=" + std::to_string(cfg_.len));
  }
  const TokenSequence ids = pad_tokens(tokens, static_cast<std::size_t>(cfg_.len));
  int last = -1;
  for (int a = 0; a < cfg_.len; ++a) {
    const auto id = ids[static_cast<std::size_t>(a)];
    if (id < 0 || id >= cfg_.vocab) throw InvalidInput("TextEncoder: token id " + std::to_string(id) + " out of vocabulary");
    if (id != kPadToken) last = a;
  }
  if (last < 0) throw InvalidInput("TextEncoder: all-padding input");

  Matrix x(cfg_.len, cfg_.dim);
  for (int a = 0; a < cfg_.len; ++a) x.row(a) = embedding_.value.row(ids[static_cast<std::size_t>(a)]) + pos_.value.row(a);

  ag::Tape t;
  ag::Var h = t.constant(std::move(x));
  ag::Var mix = t.constant_ref(causal_mean_);
  for (const auto& b : blocks_) {
    h = ag::add(t, h, ag::matmul(t, mix, h));
    h = b.forward(t, h);
  }
  h = ag::layer_norm(t, h, t.constant_ref(final_gain_.value), t.constant_ref(final_bias_.value));
  Matrix out = t.value(h);
  const int length = last + 1;
  out.bottomRows(cfg_.len - length).setZero();

  TextFeatures f;
  f.sentence = out.row(last);
  f.tokens = FeatureMatrix(std::move(out));
  f.length = length;
  return f;
}

std::vector<const Parameter*> TextEncoder::parameters() const {
  std::vector<const Parameter*> ps{&embedding_, &pos_};
  for (const auto& b : blocks_) {
    for (const Parameter* p : {&b.ln_gain, &b.ln_bias, &b.w1, &b.b1, &b.w2, &b.b2}) ps.push_back(p);
  }
  ps.push_back(&final_gain_);
  ps.push_back(&final_bias_);
  return ps;
}

std::size_t TextEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

std::uint64_t TextEncoder::checksum() const {
  Fnv1a h;
  hash_params(h, parameters());
  return h.digest();
}

}  // namespace refseg
