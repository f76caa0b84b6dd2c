#include "refseg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refseg/error.hpp"

namespace refseg {

GroundTruthPartition GroundTruthPartition::from_mask(const BinaryMask& mask) {
  GroundTruthPartition p;
  p.width = mask.width();
  p.height = mask.height();
  p.labels.assign(mask.bits().begin(), mask.bits().end());
  return p;
}

std::vector<std::size_t> GroundTruthPartition::positives() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> GroundTruthPartition::negatives() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) out.push_back(i);
  }
  return out;
}

Matrix SegFeatures::logits() const {
  if (pixels.cols() != text.cols() || text.rows() != 1) throw InvalidInput("SegFeatures: text/pixel dims differ");
  if (pixels.rows() != static_cast<Eigen::Index>(width) * height) throw InvalidInput("SegFeatures: pixel count");
  return pixels * text.transpose();
}

Matrix bilinear_upsample_matrix(int grid_h, int grid_w, int out_h, int out_w) {
  if (grid_h < 1 || grid_w < 1 || out_h < 1 || out_w < 1) throw InvalidInput("bilinear_upsample_matrix: empty grid");
  struct Tap {
    int lo, hi;
    double w_hi;
  };
  auto taps = [](int grid, int out) {
    std::vector<Tap> v(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(grid) / out;
    for (int o = 0; o < out; ++o) {
      const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
      const int lo = std::min(static_cast<int>(src), grid - 1);
      const int hi = std::min(lo + 1, grid - 1);
      v[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
    }
    return v;
  };
  const auto ty = taps(grid_h, out_h);
  const auto tx = taps(grid_w, out_w);
  Matrix u = Matrix::Zero(static_cast<Eigen::Index>(out_h) * out_w, static_cast<Eigen::Index>(grid_h) * grid_w);
  for (int y = 0; y < out_h; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const Eigen::Index row = static_cast<Eigen::Index>(y) * out_w + x;
      u(row, a.lo * grid_w + b.lo) += (1.0 - a.w_hi) * (1.0 - b.w_hi);
      u(row, a.lo * grid_w + b.hi) += (1.0 - a.w_hi) * b.w_hi;
      u(row, a.hi * grid_w + b.lo) += a.w_hi * (1.0 - b.w_hi);
      u(row, a.hi * grid_w + b.hi) += a.w_hi * b.w_hi;
    }
  }
  return u;
}

// --- decoder ------------------------------------------------------------------

SegDecoder::SegDecoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg.decoder), dim_(cfg.vision.dim) {
  const DecoderConfig& d = cfg.decoder;
  if (d.blocks < 0 || d.heads < 1 || d.attn_dim < d.heads || d.attn_dim % d.heads != 0 || d.ffn_hidden < 1) {
    throw ConfigError("decoder: attn_dim must be a positive multiple of heads");
  }
  const int dv = cfg.vision.dim;
  const int dt = cfg.text.dim;
  mask_size_ = cfg.vision.image_size;
  memory_proj_ = Parameter("decoder.memory_proj", random_normal(dt, dv, 1.0 / std::sqrt(dt), rng));
  text_proj_ = Parameter("decoder.text_proj", random_normal(dt, dv, 1.0 / std::sqrt(dt), rng));
  text_bias_ = Parameter("decoder.text_bias", Matrix::Zero(1, dv));
  for (int i = 0; i < d.blocks; ++i) {
    const std::string p = "decoder.block" + std::to_string(i + 1) + ".";
    Block b;
    b.ln1_g = Parameter(p + "ln1_gain", Matrix::Ones(1, dv));
    b.ln1_b = Parameter(p + "ln1_bias", Matrix::Zero(1, dv));
    b.wq = Parameter(p + "wq", random_normal(dv, d.attn_dim, 1.0 / std::sqrt(dv), rng));
    b.wk = Parameter(p + "wk", random_normal(dv, d.attn_dim, 1.0 / std::sqrt(dv), rng));
    b.wv = Parameter(p + "wv", random_normal(dv, d.attn_dim, 1.0 / std::sqrt(dv), rng));
    b.wo = Parameter(p + "wo", random_normal(d.attn_dim, dv, 0.5 / std::sqrt(d.attn_dim), rng));
    b.ln2_g = Parameter(p + "ln2_gain", Matrix::Ones(1, dv));
    b.ln2_b = Parameter(p + "ln2_bias", Matrix::Zero(1, dv));
    b.w1 = Parameter(p + "w1", random_normal(dv, d.ffn_hidden, 1.0 / std::sqrt(dv), rng));
    b.b1 = Parameter(p + "b1", Matrix::Zero(1, d.ffn_hidden));
    b.w2 = Parameter(p + "w2", random_normal(d.ffn_hidden, dv, 0.5 / std::sqrt(d.ffn_hidden), rng));
    b.b2 = Parameter(p + "b2", Matrix::Zero(1, dv));
    blocks_.push_back(std::move(b));
  }
  head_w_ = Parameter("decoder.head_w", random_normal(dv, dv, 0.1 / std::sqrt(dv), rng));
  head_b_ = Parameter("decoder.head_b", Matrix::Zero(1, dv));
  upsample_ = bilinear_upsample_matrix(cfg.vision.grid(), cfg.vision.grid(), mask_size_, mask_size_);
}

SegDecoder::Output SegDecoder::forward(ag::Tape& t, ag::Var visual, ag::Var text_tokens, int text_length,
                                       ag::Var sentence) {
  using namespace ag;
  const Matrix& tokens = t.value(text_tokens);
  const auto n_v = t.value(visual).rows();
  if (t.value(visual).cols() != dim_) throw InvalidInput("SegDecoder: visual width != D");
  if (text_length < 1 || text_length > tokens.rows()) throw InvalidInput("SegDecoder: bad text length");
  if (n_v != upsample_.cols()) throw InvalidInput("SegDecoder: token count does not match the patch grid");

  // Padding columns get -inf-like logits so they never receive attention.
  Matrix key_mask = Matrix::Zero(n_v, tokens.rows());
  key_mask.rightCols(tokens.rows() - text_length).setConstant(-1e30);

  const Var memory = matmul(t, text_tokens, t.param(memory_proj_));
  const int head_dim = cfg_.attn_dim / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var q = visual;
  for (Block& b : blocks_) {
    const Var h = layer_norm(t, q, t.param(b.ln1_g), t.param(b.ln1_b));
    const Var qq = matmul(t, h, t.param(b.wq));
    const Var kk = matmul(t, memory, t.param(b.wk));
    const Var vv = matmul(t, memory, t.param(b.wv));
    std::vector<Var> heads;
    for (int k = 0; k < cfg_.heads; ++k) {
      const Var qh = slice_cols(t, qq, k * head_dim, head_dim);
      const Var kh = slice_cols(t, kk, k * head_dim, head_dim);
      const Var vh = slice_cols(t, vv, k * head_dim, head_dim);
      const Var att = softmax_rows(t, scale(t, matmul_nt(t, qh, kh), inv_sqrt), &key_mask);
      heads.push_back(matmul(t, att, vh));
    }
    q = add(t, q, matmul(t, concat_cols(t, heads), t.param(b.wo)));
    Var f = layer_norm(t, q, t.param(b.ln2_g), t.param(b.ln2_b));
    f = gelu(t, add_row(t, matmul(t, f, t.param(b.w1)), t.param(b.b1)));
    q = add(t, q, add_row(t, matmul(t, f, t.param(b.w2)), t.param(b.b2)));
  }

  Output out;
  out.patch_features = add_row(t, matmul(t, q, t.param(head_w_)), t.param(head_b_));
  out.text_vector = add_row(t, matmul(t, sentence, t.param(text_proj_)), t.param(text_bias_));
  // Upsampling is linear, so it commutes with the per-pixel dot product.
  const Var patch_logits = matmul_nt(t, out.patch_features, out.text_vector);
  out.pixel_logits = matmul(t, t.constant_ref(upsample_), patch_logits);
  return out;
}

SegFeatures SegDecoder::decode(const FeatureMatrix& visual, const FeatureMatrix& text_tokens, int text_length,
                               const Matrix& sentence) {
  ag::Tape t;
  t.set_grad_enabled(false);
  const Output o = forward(t, t.constant_ref(visual.data()), t.constant_ref(text_tokens.data()), text_length,
                           t.constant_ref(sentence));
  SegFeatures s;
  s.width = mask_size_;
  s.height = mask_size_;
  s.pixels = upsample_ * t.value(o.patch_features);
  s.text = t.value(o.text_vector);
  return s;
}

std::vector<Parameter*> SegDecoder::parameters() {
  std::vector<Parameter*> ps{&memory_proj_, &text_proj_, &text_bias_};
  for (Block& b : blocks_) {
    for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2}) {
      ps.push_back(p);
    }
  }
  ps.push_back(&head_w_);
  ps.push_back(&head_b_);
  return ps;
}

std::vector<const Parameter*> SegDecoder::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<SegDecoder*>(this)->parameters()) out.push_back(p);
  return out;
}

// --- losses -------------------------------------------------------------------

ag::Var dis_loss(ag::Tape& t, ag::Var pixel_logits, const GroundTruthPartition& gt) {
  const Matrix& l = t.value(pixel_logits);
  if (l.cols() != 1 || l.rows() != static_cast<Eigen::Index>(gt.labels.size()) || gt.labels.empty()) {
    throw InvalidInput("dis_loss: partition does not cover the pixel grid");
  }
  return ag::bce_with_logits_mean(t, pixel_logits, gt.labels, kLogitClamp);
}

double dis_loss_from_logits(const Matrix& pixel_logits, const GroundTruthPartition& gt) {
  ag::Tape t;
  return t.scalar(dis_loss(t, t.constant_ref(pixel_logits), gt));
}

double dis_loss(const SegFeatures& seg, const GroundTruthPartition& gt) {
  if (seg.width != gt.width || seg.height != gt.height) throw InvalidInput("dis_loss: grid size mismatch");
  return dis_loss_from_logits(seg.logits(), gt);
}

ag::Var total_loss(ag::Tape& t, ag::Var dis, ag::Var cpcl, ag::Var tccl, const LossWeights& w) {
  w.validate();
  ag::Var total = ag::add(t, dis, ag::scale(t, cpcl, w.lambda_cpcl));
  return ag::add(t, total, ag::scale(t, tccl, w.lambda_tccl));
}

double total_loss(double dis, double cpcl, double tccl, const LossWeights& w) {
  w.validate();
  return dis + w.lambda_cpcl * cpcl + w.lambda_tccl * tccl;
}

BinaryMask predict_mask(const Matrix& pixel_logits, int width, int height, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidInput("predict_mask: threshold must lie in (0, 1)");
  if (pixel_logits.size() != static_cast<Eigen::Index>(width) * height) {
    throw InvalidInput("predict_mask: logit count does not match the grid");
  }
  BinaryMask m(width, height);
  const double* data = pixel_logits.data();
  for (Eigen::Index j = 0; j < pixel_logits.size(); ++j) {
    const double p = 1.0 / (1.0 + std::exp(-data[j]));
    if (p > threshold) m.set_index(static_cast<std::size_t>(j));
  }
  return m;
}

BinaryMask predict_mask(const SegFeatures& seg, double threshold) {
  return predict_mask(seg.logits(), seg.width, seg.height, threshold);
}

}  // namespace refseg
