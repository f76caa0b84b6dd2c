#include "refseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "refseg/error.hpp"

namespace refseg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config: bad numeric value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + std::string(v) + "' for " + std::string(key));
}

std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
  std::string s(v);
  std::erase_if(s, [](char c) { return c == '[' || c == ']' || c == ' '; });
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  }
  return out;
}

std::string int_list(const std::vector<int>& xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out + "]";
}

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

RcaVariant parse_rca_variant(std::string_view s) {
  static constexpr std::pair<std::string_view, RcaVariant> names[] = {
      {"compose_only", RcaVariant::ComposeOnly}, {"compose_rescaled", RcaVariant::ComposeRescaled},
      {"concat", RcaVariant::Concat},            {"concat_rescaled", RcaVariant::ConcatRescaled},
      {"add", RcaVariant::Add},                  {"add_rescaled", RcaVariant::AddRescaled},
  };
  for (auto [n, v] : names) {
    if (s == n) return v;
  }
  if (!s.empty() && s.front() == '#') s.remove_prefix(1);
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '6') return static_cast<RcaVariant>(s[0] - '0');
  throw ConfigError("unknown RCA variant '" + std::string(s) + "'");
}

std::string to_string(RcaVariant v) {
  switch (v) {
    case RcaVariant::ComposeOnly: return "compose_only";
    case RcaVariant::ComposeRescaled: return "compose_rescaled";
    case RcaVariant::Concat: return "concat";
    case RcaVariant::ConcatRescaled: return "concat_rescaled";
    case RcaVariant::Add: return "add";
    case RcaVariant::AddRescaled: return "add_rescaled";
  }
  return "?";
}

int TrainConfig::decay_epoch() const {
  return lr_decay_epoch >= 0 ? lr_decay_epoch : static_cast<int>(std::lround(0.7 * epochs));
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(std::string("config: ") + msg);
  };
  require(epochs >= 0, "train.epochs must be >= 0");
  require(learning_rate > 0 && std::isfinite(learning_rate), "train.lr must be positive");
  require(lr_decay_factor > 0, "train.lr_decay_factor must be positive");
  require(batch_size >= 1, "train.batch_size must be >= 1");
  try {
    weights.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  const auto& m = model;
  require(m.vision.dim >= 1 && m.vision.layers >= 1 && m.vision.patch >= 1 && m.vision.hidden >= 1,
          "vision dims must be positive");
  require(m.vision.image_size % m.vision.patch == 0, "vision.image_size must be a multiple of vision.patch");
  require(m.text.dim >= 1 && m.text.layers >= 0 && m.text.len >= 1 && m.text.vocab >= 2 && m.text.hidden >= 1,
          "text dims must be positive");
  require(m.rca.proj_dim >= 1, "rca.proj_dim must be positive");
  for (std::size_t i = 0; i < m.rca.layers.size(); ++i) {
    require(m.rca.layers[i] >= 1 && m.rca.layers[i] < m.vision.layers,
            "rca.layers entries must lie in [1, vision.layers - 1]");
    require(i == 0 || m.rca.layers[i] > m.rca.layers[i - 1], "rca.layers must be strictly increasing");
  }
  require(!m.tlm.cpcl_layers.empty(), "tlm.cpcl_layers must not be empty");
  for (int l : m.tlm.cpcl_layers) require(l >= 1 && l <= m.vision.layers, "tlm.cpcl_layers out of range");
  require(m.tlm.k_negatives >= 0, "tlm.k_negatives must be >= 0");
  require(m.decoder.blocks >= 0 && m.decoder.heads >= 1 && m.decoder.attn_dim % m.decoder.heads == 0,
          "decoder.attn_dim must be divisible by decoder.heads");
  require(m.predict_threshold > 0 && m.predict_threshold < 1, "predict.threshold must lie in (0, 1)");
}

void apply_setting(TrainConfig& c, std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  auto& m = c.model;
  if (key == "vision.seed") m.vision.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "vision.dim") m.vision.dim = parse_number<int>(key, v);
  else if (key == "vision.layers") m.vision.layers = parse_number<int>(key, v);
  else if (key == "vision.patch") m.vision.patch = parse_number<int>(key, v);
  else if (key == "vision.hidden") m.vision.hidden = parse_number<int>(key, v);
  else if (key == "vision.image_size") m.vision.image_size = parse_number<int>(key, v);
  else if (key == "vision.channels") m.vision.channels = parse_number<int>(key, v);
  else if (key == "text.seed") m.text.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "text.dim") m.text.dim = parse_number<int>(key, v);
  else if (key == "text.layers") m.text.layers = parse_number<int>(key, v);
  else if (key == "text.len") m.text.len = parse_number<int>(key, v);
  else if (key == "text.vocab") m.text.vocab = parse_number<int>(key, v);
  else if (key == "text.hidden") m.text.hidden = parse_number<int>(key, v);
  else if (key == "rca.layers") m.rca.layers = parse_int_list(key, v);
  else if (key == "rca.variant") m.rca.variant = parse_rca_variant(v);
  else if (key == "rca.init_rescale") m.rca.init_rescale = parse_number<double>(key, v);
  else if (key == "rca.proj_dim") m.rca.proj_dim = parse_number<int>(key, v);
  else if (key == "tlm.cpcl_layers") m.tlm.cpcl_layers = parse_int_list(key, v);
  else if (key == "tlm.k_negatives") m.tlm.k_negatives = parse_number<int>(key, v);
  else if (key == "decoder.blocks") m.decoder.blocks = parse_number<int>(key, v);
  else if (key == "decoder.heads") m.decoder.heads = parse_number<int>(key, v);
  else if (key == "decoder.attn_dim") m.decoder.attn_dim = parse_number<int>(key, v);
  else if (key == "decoder.ffn_hidden") m.decoder.ffn_hidden = parse_number<int>(key, v);
  else if (key == "predict.threshold") m.predict_threshold = parse_number<double>(key, v);
  else if (key == "train.epochs") c.epochs = parse_number<int>(key, v);
  else if (key == "train.lr") c.learning_rate = parse_number<double>(key, v);
  else if (key == "train.lr_decay_epoch") c.lr_decay_epoch = parse_number<int>(key, v);
  else if (key == "train.lr_decay_factor") c.lr_decay_factor = parse_number<double>(key, v);
  else if (key == "train.batch_size") c.batch_size = parse_number<int>(key, v);
  else if (key == "train.seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "loss.lambda_cpcl") c.weights.lambda_cpcl = parse_number<double>(key, v);
  else if (key == "loss.lambda_tccl") c.weights.lambda_tccl = parse_number<double>(key, v);
  else if (key == "ablation.use_rca") c.flags.use_rca = parse_bool(key, v);
  else if (key == "ablation.use_cpcl") c.flags.use_cpcl = parse_bool(key, v);
  else if (key == "ablation.use_tccl") c.flags.use_tccl = parse_bool(key, v);
  else throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  base.validate();
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_config_string(const TrainConfig& c) {
  const auto& m = c.model;
  std::ostringstream os;
  os << "vision.seed=" << m.vision.seed << "\n"
     << "vision.dim=" << m.vision.dim << "\n"
     << "vision.layers=" << m.vision.layers << "\n"
     << "vision.patch=" << m.vision.patch << "\n"
     << "vision.hidden=" << m.vision.hidden << "\n"
     << "vision.image_size=" << m.vision.image_size << "\n"
     << "vision.channels=" << m.vision.channels << "\n"
     << "text.seed=" << m.text.seed << "\n"
     << "text.dim=" << m.text.dim << "\n"
     << "text.layers=" << m.text.layers << "\n"
     << "text.len=" << m.text.len << "\n"
     << "text.vocab=" << m.text.vocab << "\n"
     << "text.hidden=" << m.text.hidden << "\n"
     << "rca.layers=" << int_list(m.rca.layers) << "\n"
     << "rca.variant=" << to_string(m.rca.variant) << "\n"
     << "rca.init_rescale=" << fmt_double(m.rca.init_rescale) << "\n"
     << "rca.proj_dim=" << m.rca.proj_dim << "\n"
     << "tlm.cpcl_layers=" << int_list(m.tlm.cpcl_layers) << "\n"
     << "tlm.k_negatives=" << m.tlm.k_negatives << "\n"
     << "decoder.blocks=" << m.decoder.blocks << "\n"
     << "decoder.heads=" << m.decoder.heads << "\n"
     << "decoder.attn_dim=" << m.decoder.attn_dim << "\n"
     << "decoder.ffn_hidden=" << m.decoder.ffn_hidden << "\n"
     << "predict.threshold=" << fmt_double(m.predict_threshold) << "\n"
     << "train.epochs=" << c.epochs << "\n"
     << "train.lr=" << fmt_double(c.learning_rate) << "\n"
     << "train.lr_decay_epoch=" << c.lr_decay_epoch << "\n"
     << "train.lr_decay_factor=" << fmt_double(c.lr_decay_factor) << "\n"
     << "train.batch_size=" << c.batch_size << "\n"
     << "train.seed=" << c.seed << "\n"
     << "loss.lambda_cpcl=" << fmt_double(c.weights.lambda_cpcl) << "\n"
     << "loss.lambda_tccl=" << fmt_double(c.weights.lambda_tccl) << "\n"
     << "ablation.use_rca=" << (c.flags.use_rca ? "true" : "false") << "\n"
     << "ablation.use_cpcl=" << (c.flags.use_cpcl ? "true" : "false") << "\n"
     << "ablation.use_tccl=" << (c.flags.use_tccl ? "true" : "false") << "\n";
  return os.str();
}

std::vector<GridCell> parse_grid(std::string_view text) {
  std::vector<GridCell> cells;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    GridCell cell;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError("grid: expected key=value, got '" + tok + "'");
      std::string k = tok.substr(0, eq);
      std::string v = tok.substr(eq + 1);
      if (k == "name") cell.name = v;
      else cell.overrides.emplace_back(std::move(k), std::move(v));
    }
    if (cell.name.empty() && cell.overrides.empty()) continue;
    if (cell.name.empty()) cell.name = "cell" + std::to_string(cells.size());
    cells.push_back(std::move(cell));
  }
  return cells;
}

TrainConfig apply_cell(const TrainConfig& base, const GridCell& cell) {
  TrainConfig c = base;
  for (const auto& [k, v] : cell.overrides) apply_setting(c, k, v);
  c.validate();
  return c;
}

}  // namespace refseg
