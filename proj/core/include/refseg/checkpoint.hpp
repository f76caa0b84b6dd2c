#pragma once

// Binary training-state container.
//
// Layout (little-endian):
//   magic "RSEGCKPT" | u32 version | str config | i32 epoch | i64 adam step | str rng state
//   | u32 tensor count | per tensor: str name, u64 rows, u64 cols, f64 value[], f64 m[], f64 v[]
//   | u32 log count | per entry: i32 epoch, f64 dis, cpcl, tccl, total, lr, seconds
// where str is a u64 byte length followed by the bytes.

#include <filesystem>
#include <string>
#include <string_view>

#include "refseg/trainer.hpp"

namespace refseg {

inline constexpr std::string_view kCheckpointMagic = "RSEGCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_to_bytes(const TrainState& state);
/// Rebuilds the model from the stored config, then restores tensors and optimizer state.
/// Throws ParseError on a bad magic, version, truncation or tensor mismatch.
TrainState checkpoint_from_bytes(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace refseg
