#pragma once

// Synthetic multi-instance scenes with templated referring expressions.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refseg/datamodel.hpp"
#include "refseg/dataset_io.hpp"
#include "refseg/random.hpp"

namespace refseg::synth {

enum class Shape { Circle, Square, Triangle };
enum class SizeClass { Small, Large };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 8;
inline constexpr int kGridCells = 9;
inline constexpr std::int32_t kEosToken = 1;

struct InstanceSpec {
  Shape shape = Shape::Circle;
  int color = 0;  ///< palette index
  SizeClass size = SizeClass::Small;
  int cell = 0;   ///< 3x3 grid cell, row-major
  double cx = 0;  ///< centre in pixel coordinates
  double cy = 0;
  double half_extent = 0;

  friend bool operator==(const InstanceSpec&, const InstanceSpec&) = default;
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  std::vector<InstanceSpec> instances;
  std::uint64_t seed = 0;
};

struct SynthConfig {
  int image_size = 64;
  int text_len = 32;
  int max_instances = 4;
  double small_half_extent = 5.0;
  double large_half_extent = 9.0;
  /// Probability that a record lands in the validation split.
  double val_fraction = 0.1;
};

/// Word list; the index of a word is its token id. Id 0 pads, id 1 ends a sequence.
const std::vector<std::string>& vocabulary();
std::string detokenize(std::span<const std::int32_t> tokens);

std::array<float, 3> palette(int color);

/// Pixel (x, y) is set when its centre (x + 0.5, y + 0.5) lies inside the shape.
/// Throws InvalidInput when the shape's bounding box leaves the canvas.
BinaryMask rasterize(const InstanceSpec& inst, int width, int height);

/// Templated expression naming size, colour, shape and position, terminated by the end token
/// and padded to `length`. Synonyms and template are drawn from `rng`.
TokenSequence render_expression(const InstanceSpec& inst, Rng& rng, int length = 32);

/// Attributes named by an expression; nullopt when a slot is missing or ambiguous.
struct ParsedExpression {
  Shape shape;
  int color;
  SizeClass size;
  int cell;
};
std::optional<ParsedExpression> parse_expression(std::span<const std::int32_t> tokens);
bool expression_matches(std::span<const std::int32_t> tokens, const InstanceSpec& inst);

/// Draws a scene. Eligible scenes hold a target plus 1-2 instances of the same shape, each
/// differing from the target in one of colour, size or (only) position; other scenes hold
/// instances of pairwise different shapes. Returns the scene and the target's index.
std::pair<SceneSpec, std::size_t> sample_scene(Rng& rng, bool nta_eligible, const SynthConfig& cfg = {});

Image render_image(const SceneSpec& scene);
RISExample make_example(const SceneSpec& scene, std::size_t target, Rng& rng, const SynthConfig& cfg = {});

/// Deterministic in (seed, config). Exactly round(n * nta_fraction) scenes are eligible.
std::vector<RISExample> generate(std::uint64_t seed, std::size_t n, double nta_fraction, const SynthConfig& cfg = {});
/// generate() plus a header recording the configuration and a hashed validation split.
Dataset generate_dataset(std::uint64_t seed, std::size_t n, double nta_fraction, const SynthConfig& cfg = {});

}  // namespace refseg::synth
