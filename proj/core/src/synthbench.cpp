#include "refseg/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refseg/error.hpp"

namespace refseg::synth {

namespace {

// Token ids of the fixed word list below.
enum Word : std::int32_t {
  kThe = 2, kA, kIn, kAt, kOf, kObject, kShapeWord, kPart, kImage, kThat, kIs, kOne,
  kCircle, kDisc, kSquare, kBox, kTriangle, kWedge,
  kRed, kGreen, kBlue, kYellow, kCyan, kMagenta, kWhite, kOrange,
  kSmall, kTiny, kLarge, kBig,
  kTop, kUpper, kMiddle, kBottom, kLower, kLeft, kCenter, kRight,
};

template <typename T>
T pick(Rng& rng, std::initializer_list<T> options) {
  std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
  return *(options.begin() + d(rng));
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::int32_t shape_word(Shape s, Rng& rng) {
  switch (s) {
    case Shape::Circle: return pick(rng, {kCircle, kDisc});
    case Shape::Square: return pick(rng, {kSquare, kBox});
    case Shape::Triangle: return pick(rng, {kTriangle, kWedge});
  }
  return kCircle;
}

std::int32_t size_word(SizeClass s, Rng& rng) {
  return s == SizeClass::Small ? pick(rng, {kSmall, kTiny}) : pick(rng, {kLarge, kBig});
}

std::int32_t row_word(int row, Rng& rng) {
  if (row == 0) return pick(rng, {kTop, kUpper});
  if (row == 1) return kMiddle;
  return pick(rng, {kBottom, kLower});
}

std::int32_t col_word(int col) { return col == 0 ? kLeft : (col == 1 ? kCenter : kRight); }

InstanceSpec place(Shape shape, int color, SizeClass size, int cell, Rng& rng, const SynthConfig& cfg) {
  InstanceSpec inst{shape, color, size, cell, 0.0, 0.0, 0.0};
  inst.half_extent = size == SizeClass::Small ? cfg.small_half_extent : cfg.large_half_extent;
  const double cs = static_cast<double>(cfg.image_size) / 3.0;
  // Centres sit on pixel centres; jitter keeps the shape inside its cell.
  const int jitter = std::max(0, static_cast<int>(std::floor(cs / 2.0 - inst.half_extent - 1.0)));
  const double base_x = std::floor((cell % 3 + 0.5) * cs) + 0.5;
  const double base_y = std::floor((cell / 3 + 0.5) * cs) + 0.5;
  inst.cx = base_x + uniform_int(rng, -jitter, jitter);
  inst.cy = base_y + uniform_int(rng, -jitter, jitter);
  return inst;
}

}  // namespace

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words{
      "<pad>", "<eos>", "the", "a", "in", "at", "of", "object", "shape", "part", "image", "that", "is", "one",
      "circle", "disc", "square", "box", "triangle", "wedge",
      "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
      "small", "tiny", "large", "big",
      "top", "upper", "middle", "bottom", "lower", "left", "center", "right"};
  return words;
}

std::string detokenize(std::span<const std::int32_t> tokens) {
  const auto& v = vocabulary();
  std::string out;
  for (const auto id : tokens) {
    if (id == kPadToken || id == kEosToken) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= v.size()) throw InvalidInput("detokenize: unknown token id");
    if (!out.empty()) out.push_back(' ');
    out += v[static_cast<std::size_t>(id)];
  }
  return out;
}

std::array<float, 3> palette(int color) {
  // Multiples of 1/16: exact in float and short in the text records.
  static constexpr std::array<std::array<float, 3>, kColorCount> colors{{
      {0.875F, 0.125F, 0.125F},    // red
      {0.125F, 0.75F, 0.25F},      // green
      {0.125F, 0.25F, 0.9375F},    // blue
      {0.9375F, 0.875F, 0.125F},   // yellow
      {0.125F, 0.8125F, 0.875F},   // cyan
      {0.8125F, 0.125F, 0.75F},    // magenta
      {0.9375F, 0.9375F, 0.9375F}, // white
      {0.9375F, 0.5F, 0.125F},     // orange
  }};
  if (color < 0 || color >= kColorCount) throw InvalidInput("palette: colour index out of range");
  return colors[static_cast<std::size_t>(color)];
}

BinaryMask rasterize(const InstanceSpec& inst, int width, int height) {
  const double h = inst.half_extent;
  if (width < 1 || height < 1 || h < 0.0 || inst.cx - h < 0.0 || inst.cy - h < 0.0 || inst.cx + h > width ||
      inst.cy + h > height) {
    throw InvalidInput("rasterize: instance leaves the canvas");
  }
  BinaryMask m(width, height);
  for (int y = 0; y < height; ++y) {
    const double py = y + 0.5;
    const double dy = py - inst.cy;
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - inst.cx;
      bool inside = false;
      switch (inst.shape) {
        case Shape::Circle: inside = dx * dx + dy * dy <= h * h; break;
        case Shape::Square: inside = std::abs(dx) <= h && std::abs(dy) <= h; break;
        // Apex at (cx, cy - h), base on y = cy + h with half-width h.
        case Shape::Triangle: inside = std::abs(dy) <= h && std::abs(dx) <= (dy + h) / 2.0; break;
      }
      if (inside) m.set(x, y);
    }
  }
  return m;
}

TokenSequence render_expression(const InstanceSpec& inst, Rng& rng, int length) {
  const std::int32_t size = size_word(inst.size, rng);
  const std::int32_t color = kRed + inst.color;
  const std::int32_t shape = shape_word(inst.shape, rng);
  const std::int32_t row = row_word(inst.cell / 3, rng);
  const std::int32_t col = col_word(inst.cell % 3);
  TokenSequence t;
  switch (uniform_int(rng, 0, 2)) {
    case 0:
      t = {kThe, size, color, shape, kIn, kThe, row, col};
      break;
    case 1:
      t = {kOne, size, color, shape, kObject, kThat, kIs, kIn, kThe, row, col, kPart, kOf, kThe, kImage};
      break;
    default:
      t = {kA, color, shape, kShapeWord, kThat, kIs, size, kAt, kThe, row, col};
      break;
  }
  t.push_back(kEosToken);
  if (static_cast<int>(t.size()) > length) throw InvalidInput("render_expression: text length too small");
  return pad_tokens(t, static_cast<std::size_t>(length));
}

std::optional<ParsedExpression> parse_expression(std::span<const std::int32_t> tokens) {
  std::optional<Shape> shape;
  std::optional<int> color;
  std::optional<SizeClass> size;
  std::optional<int> row;
  std::optional<int> col;
  auto set_once = [](auto& slot, auto value) {
    if (slot && *slot != value) return false;
    slot = value;
    return true;
  };
  for (const auto id : tokens) {
    bool ok = true;
    if (id == kCircle || id == kDisc) ok = set_once(shape, Shape::Circle);
    else if (id == kSquare || id == kBox) ok = set_once(shape, Shape::Square);
    else if (id == kTriangle || id == kWedge) ok = set_once(shape, Shape::Triangle);
    else if (id >= kRed && id <= kOrange) ok = set_once(color, static_cast<int>(id - kRed));
    else if (id == kSmall || id == kTiny) ok = set_once(size, SizeClass::Small);
    else if (id == kLarge || id == kBig) ok = set_once(size, SizeClass::Large);
    else if (id == kTop || id == kUpper) ok = set_once(row, 0);
    else if (id == kMiddle) ok = set_once(row, 1);
    else if (id == kBottom || id == kLower) ok = set_once(row, 2);
    else if (id == kLeft) ok = set_once(col, 0);
    else if (id == kCenter) ok = set_once(col, 1);
    else if (id == kRight) ok = set_once(col, 2);
    if (!ok) return std::nullopt;
  }
  if (!shape || !color || !size || !row || !col) return std::nullopt;
  return ParsedExpression{*shape, *color, *size, *row * 3 + *col};
}

bool expression_matches(std::span<const std::int32_t> tokens, const InstanceSpec& inst) {
  const auto p = parse_expression(tokens);
  return p && p->shape == inst.shape && p->color == inst.color && p->size == inst.size && p->cell == inst.cell;
}

std::pair<SceneSpec, std::size_t> sample_scene(Rng& rng, bool nta_eligible, const SynthConfig& cfg) {
  if (cfg.max_instances < 2 && nta_eligible) throw InvalidInput("sample_scene: eligible scenes need two instances");
  SceneSpec scene;
  scene.width = cfg.image_size;
  scene.height = cfg.image_size;
  std::array<int, kGridCells> cells{};
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::array<int, kShapeCount> shapes{0, 1, 2};
  std::shuffle(shapes.begin(), shapes.end(), rng);
  const int max_inst = std::min(cfg.max_instances, kGridCells);

  auto random_size = [&] { return uniform_int(rng, 0, 1) == 0 ? SizeClass::Small : SizeClass::Large; };
  std::size_t next_cell = 0;
  if (nta_eligible) {
    const auto shape = static_cast<Shape>(shapes[0]);
    const int color = uniform_int(rng, 0, kColorCount - 1);
    const SizeClass size = random_size();
    const int siblings = std::min(uniform_int(rng, 1, 2), max_inst - 1);
    const int distractors = std::min(uniform_int(rng, 0, 1), max_inst - 1 - siblings);
    scene.instances.push_back(place(shape, color, size, cells[next_cell++], rng, cfg));
    for (int s = 0; s < siblings; ++s) {
      int sc = color;
      SizeClass ss = size;
      switch (uniform_int(rng, 0, 2)) {
        case 0: sc = (color + uniform_int(rng, 1, kColorCount - 1)) % kColorCount; break;
        case 1: ss = size == SizeClass::Small ? SizeClass::Large : SizeClass::Small; break;
        default: break;  // position only
      }
      scene.instances.push_back(place(shape, sc, ss, cells[next_cell++], rng, cfg));
    }
    for (int d = 0; d < distractors; ++d) {
      const auto other = static_cast<Shape>(shapes[static_cast<std::size_t>(uniform_int(rng, 1, kShapeCount - 1))]);
      scene.instances.push_back(
          place(other, uniform_int(rng, 0, kColorCount - 1), random_size(), cells[next_cell++], rng, cfg));
    }
  } else {
    const int count = uniform_int(rng, 1, std::min(kShapeCount, max_inst));
    for (int k = 0; k < count; ++k) {
      scene.instances.push_back(place(static_cast<Shape>(shapes[static_cast<std::size_t>(k)]),
                                      uniform_int(rng, 0, kColorCount - 1), random_size(), cells[next_cell++], rng,
                                      cfg));
    }
  }
  // The target of an eligible scene is always one of the same-shape group.
  const Shape target_shape = scene.instances.front().shape;
  std::shuffle(scene.instances.begin(), scene.instances.end(), rng);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    if (!nta_eligible || scene.instances[i].shape == target_shape) candidates.push_back(i);
  }
  const std::size_t target = candidates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
  return {scene, target};
}

Image render_image(const SceneSpec& scene) {
  Image img(scene.height, scene.width, 3);
  for (const auto& inst : scene.instances) {
    const BinaryMask m = rasterize(inst, scene.width, scene.height);
    const auto rgb = palette(inst.color);
    for (int y = 0; y < scene.height; ++y) {
      for (int x = 0; x < scene.width; ++x) {
        if (!m.at(x, y)) continue;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[static_cast<std::size_t>(c)];
      }
    }
  }
  return img;
}

RISExample make_example(const SceneSpec& scene, std::size_t target, Rng& rng, const SynthConfig& cfg) {
  if (target >= scene.instances.size()) throw InvalidInput("make_example: target index out of range");
  const InstanceSpec& t = scene.instances[target];
  RISExample ex;
  ex.image = render_image(scene);
  ex.positive_text = render_expression(t, rng, cfg.text_len);
  ex.target_mask = rasterize(t, scene.width, scene.height);
  ex.category_id = static_cast<int>(t.shape);
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const InstanceSpec& o = scene.instances[i];
    if (i == target || o.shape != t.shape) continue;
    ex.sibling_masks.push_back(rasterize(o, scene.width, scene.height));
    ex.negative_texts.push_back(render_expression(o, rng, cfg.text_len));
  }
  ex.validate();
  return ex;
}

namespace {

std::vector<std::uint8_t> eligibility(std::uint64_t seed, std::size_t n, double nta_fraction) {
  if (!(nta_fraction >= 0.0 && nta_fraction <= 1.0)) throw InvalidInput("generate: nta_fraction must lie in [0, 1]");
  const auto eligible = static_cast<std::size_t>(std::llround(static_cast<double>(n) * nta_fraction));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xE11'61B1EULL));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint8_t> flags(n, 0);
  for (std::size_t k = 0; k < eligible; ++k) flags[order[k]] = 1;
  return flags;
}

}  // namespace

std::vector<RISExample> generate(std::uint64_t seed, std::size_t n, double nta_fraction, const SynthConfig& cfg) {
  const auto flags = eligibility(seed, n, nta_fraction);
  std::vector<RISExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i + 1));
    const auto [scene, target] = sample_scene(rng, flags[i] != 0, cfg);
    out.push_back(make_example(scene, target, rng, cfg));
  }
  return out;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t n, double nta_fraction, const SynthConfig& cfg) {
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw InvalidInput("generate: val_fraction must lie in [0, 1)");
  Dataset ds;
  ds.examples = generate(seed, n, nta_fraction, cfg);
  ds.header.config = {{"generator", "refseg-synth"},
                      {"generator_version", 1},
                      {"seed", seed},
                      {"n", n},
                      {"nta_fraction", nta_fraction},
                      {"image_size", cfg.image_size},
                      {"text_len", cfg.text_len},
                      {"max_instances", cfg.max_instances},
                      {"small_half_extent", cfg.small_half_extent},
                      {"large_half_extent", cfg.large_half_extent},
                      {"val_fraction", cfg.val_fraction},
                      {"vocab_size", vocabulary().size()}};
  const auto cutoff = static_cast<std::uint64_t>(std::llround(cfg.val_fraction * 1'000'000.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (derive_seed(seed ^ 0x5A17'C0DEULL, i) % 1'000'000ULL < cutoff) ds.header.val_indices.push_back(i);
  }
  return ds;
}

}  // namespace refseg::synth
