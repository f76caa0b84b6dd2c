#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "refseg/datamodel.hpp"

namespace refseg {

/// Alternating (start_index, run_length) pairs of true-runs in row-major order,
/// flattened: [s0, l0, s1, l1, ...].
std::vector<std::int64_t> rle_encode(const BinaryMask& mask);
/// Throws ParseError when runs are unordered, overlapping, empty or out of bounds.
BinaryMask rle_decode(std::span<const std::int64_t> runs, int width, int height);

/// One dataset line (no trailing newline).
std::string serialize_example(const RISExample& ex);
/// Inverse of serialize_example. Errors carry the byte offset into `line`.
RISExample deserialize_example(std::string_view line);

struct DatasetHeader {
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::size_t> val_indices;
  std::string checksum;
};

struct Dataset {
  DatasetHeader header;
  std::vector<RISExample> examples;

  std::vector<RISExample> train_split() const;
  std::vector<RISExample> val_split() const;
};

/// FNV-1a 64 over every record line (each including its '\n'), as hex.
std::string content_checksum(std::span<const std::string> record_lines);

/// Header line followed by one record per line. Computes the checksum.
void write_dataset(const std::filesystem::path& path, Dataset& dataset);
std::string dataset_to_string(Dataset& dataset);
/// Verifies the checksum; errors report absolute byte offsets into the file.
Dataset read_dataset(const std::filesystem::path& path);
Dataset dataset_from_string(std::string_view text);

}  // namespace refseg
