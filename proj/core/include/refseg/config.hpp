#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "refseg/datamodel.hpp"

namespace refseg {

/// Residual aggregation variants for injecting the text-referred feature
/// into the next frozen layer (numbered #1..#6).
enum class RcaVariant {
  ComposeOnly = 1,      ///< nu(f_vt)
  ComposeRescaled = 2,  ///< nu(f_vt) * phi
  Concat = 3,           ///< reduce([nu(f_v), f_vt])
  ConcatRescaled = 4,   ///< reduce([nu(f_v), f_vt * phi])
  Add = 5,              ///< nu(f_v) + f_vt
  AddRescaled = 6,      ///< nu(f_v) + f_vt * phi
};

/// Accepts "#1".."#6", "1".."6" or the snake_case names (compose_only, ..., add_rescaled).
RcaVariant parse_rca_variant(std::string_view s);
std::string to_string(RcaVariant v);
inline bool uses_rescale(RcaVariant v) {
  return v == RcaVariant::ComposeRescaled || v == RcaVariant::ConcatRescaled || v == RcaVariant::AddRescaled;
}
inline bool uses_reduce(RcaVariant v) { return v == RcaVariant::Concat || v == RcaVariant::ConcatRescaled; }

struct VisionConfig {
  std::uint64_t seed = 42;
  int dim = 64;
  int layers = 12;
  int patch = 8;
  int hidden = 512;
  int image_size = 64;
  int channels = 3;

  int grid() const { return image_size / patch; }
  int tokens() const { return grid() * grid(); }
};

struct TextConfig {
  std::uint64_t seed = 43;
  int dim = 64;
  int layers = 4;
  int len = 32;
  int vocab = 40;
  int hidden = 512;
};

struct RcaConfig {
  std::vector<int> layers{1, 3, 5, 7, 9, 11};
  RcaVariant variant = RcaVariant::AddRescaled;
  double init_rescale = 0.2;
  int proj_dim = 16;
};

struct TlmConfig {
  std::vector<int> cpcl_layers{4, 8, 12};
  int k_negatives = 3;
};

struct DecoderConfig {
  int blocks = 2;
  int heads = 2;
  int attn_dim = 32;
  int ffn_hidden = 32;
};

struct ModelConfig {
  VisionConfig vision;
  TextConfig text;
  RcaConfig rca;
  TlmConfig tlm;
  DecoderConfig decoder;
  double predict_threshold = 0.5;
};

/// Which proposed components are active; everything off is the plain
/// frozen-backbone + decoder baseline.
struct AblationFlags {
  bool use_rca = true;
  bool use_cpcl = true;
  bool use_tccl = true;
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-4;
  /// Epoch (0-based) from which the decayed rate applies; negative means 70% of `epochs`.
  int lr_decay_epoch = -1;
  double lr_decay_factor = 0.1;
  int batch_size = 8;
  std::uint64_t seed = 7;
  LossWeights weights;
  AblationFlags flags;
  ModelConfig model;

  int decay_epoch() const;
  /// Throws ConfigError on an inconsistent setting.
  void validate() const;
};

/// Applies one `key=value` setting. Throws ConfigError on an unknown key or bad value.
void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);
/// Flat `key=value` text; blank lines and `#` comments ignored.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
/// Every key with its current value, one per line; parse_config() reads it back.
std::string to_config_string(const TrainConfig& cfg);

/// One ablation-grid cell: a label and the overrides applied to the base config.
struct GridCell {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// One cell per non-empty line: whitespace separated `key=value` overrides,
/// with an optional `name=<label>` entry.
std::vector<GridCell> parse_grid(std::string_view text);
TrainConfig apply_cell(const TrainConfig& base, const GridCell& cell);

}  // namespace refseg
