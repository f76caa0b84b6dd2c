#include "refseg/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "refseg/error.hpp"
#include "refseg/random.hpp"

namespace refseg {

using nlohmann::json;

std::vector<std::int64_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::int64_t> runs;
  const auto bits = mask.bits();
  std::size_t i = 0;
  while (i < bits.size()) {
    if (!bits[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < bits.size() && bits[i]) ++i;
    runs.push_back(static_cast<std::int64_t>(start));
    runs.push_back(static_cast<std::int64_t>(i - start));
  }
  return runs;
}

BinaryMask rle_decode(std::span<const std::int64_t> runs, int width, int height) {
  if (width < 0 || height < 0) throw ParseError("rle: negative mask dimension", 0);
  if (runs.size() % 2 != 0) throw ParseError("rle: odd number of run entries", 0);
  BinaryMask mask(width, height);
  const auto total = static_cast<std::int64_t>(mask.pixels());
  std::int64_t next_free = 0;
  for (std::size_t k = 0; k < runs.size(); k += 2) {
    const std::int64_t start = runs[k];
    const std::int64_t len = runs[k + 1];
    if (len <= 0 || start < next_free || start + len > total) {
      throw ParseError("rle: invalid run #" + std::to_string(k / 2), 0);
    }
    for (std::int64_t p = start; p < start + len; ++p) mask.set_index(static_cast<std::size_t>(p));
    next_free = start + len;
  }
  return mask;
}

namespace {

json image_to_json(const Image& img) {
  json rows = json::array();
  for (int y = 0; y < img.height; ++y) {
    json row = json::array();
    for (int x = 0; x < img.width; ++x) {
      json px = json::array();
      for (int c = 0; c < img.channels; ++c) px.push_back(img.at(y, x, c));
      row.push_back(std::move(px));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Offset of the first occurrence of "key" in the line; a best effort locator
/// for schema errors, which the JSON parser cannot position.
std::size_t key_offset(std::string_view line, std::string_view key) {
  const std::string quoted = "\"" + std::string(key) + "\"";
  const auto pos = line.find(quoted);
  return pos == std::string_view::npos ? 0 : pos;
}

const json& require_key(const json& obj, std::string_view line, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("record: missing key '") + key + "'", line.size());
  return *it;
}

TokenSequence tokens_from_json(const json& j, std::string_view line, const char* key) {
  if (!j.is_array()) throw ParseError(std::string("record: '") + key + "' must be an array", key_offset(line, key));
  TokenSequence out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer()) {
      throw ParseError(std::string("record: '") + key + "' holds a non-integer token", key_offset(line, key));
    }
    out.push_back(v.get<std::int32_t>());
  }
  return out;
}

BinaryMask mask_from_json(const json& j, int width, int height, std::string_view line, const char* key) {
  if (!j.is_array()) throw ParseError(std::string("record: '") + key + "' must be an array", key_offset(line, key));
  std::vector<std::int64_t> runs;
  runs.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer()) {
      throw ParseError(std::string("record: '") + key + "' holds a non-integer", key_offset(line, key));
    }
    runs.push_back(v.get<std::int64_t>());
  }
  try {
    return rle_decode(runs, width, height);
  } catch (const ParseError& e) {
    throw ParseError(std::string("record: '") + key + "': " + e.what(), key_offset(line, key));
  }
}

}  // namespace

std::string serialize_example(const RISExample& ex) {
  ex.validate();
  json j;
  j["width"] = ex.image.width;
  j["height"] = ex.image.height;
  j["category"] = ex.category_id;
  j["pos_text"] = ex.positive_text;
  j["neg_texts"] = json::array();
  for (const auto& n : ex.negative_texts) j["neg_texts"].push_back(n);
  j["target_rle"] = rle_encode(ex.target_mask);
  j["siblings_rle"] = json::array();
  for (const auto& s : ex.sibling_masks) j["siblings_rle"].push_back(rle_encode(s));
  j["image"] = image_to_json(ex.image);
  return j.dump();
}

RISExample deserialize_example(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("record: malformed JSON: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!j.is_object()) throw ParseError("record: expected a JSON object", 0);

  RISExample ex;
  const json& jw = require_key(j, line, "width");
  const json& jh = require_key(j, line, "height");
  if (!jw.is_number_integer() || !jh.is_number_integer() || jw.get<int>() <= 0 || jh.get<int>() <= 0) {
    throw ParseError("record: width/height must be positive integers", key_offset(line, "width"));
  }
  const int width = jw.get<int>();
  const int height = jh.get<int>();

  const json& jc = require_key(j, line, "category");
  if (!jc.is_number_integer()) throw ParseError("record: category must be an integer", key_offset(line, "category"));
  ex.category_id = jc.get<int>();

  const json& jimg = require_key(j, line, "image");
  if (!jimg.is_array() || static_cast<int>(jimg.size()) != height) {
    throw ParseError("record: image must hold 'height' rows", key_offset(line, "image"));
  }
  int channels = -1;
  for (const auto& row : jimg) {
    if (!row.is_array() || static_cast<int>(row.size()) != width) {
      throw ParseError("record: image row must hold 'width' pixels", key_offset(line, "image"));
    }
    for (const auto& px : row) {
      if (!px.is_array() || px.empty() || (channels >= 0 && static_cast<int>(px.size()) != channels)) {
        throw ParseError("record: image pixels must share a channel count", key_offset(line, "image"));
      }
      channels = static_cast<int>(px.size());
    }
  }
  ex.image = Image(height, width, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const json& v = jimg[y][x][c];
        if (!v.is_number()) throw ParseError("record: non-numeric image value", key_offset(line, "image"));
        ex.image.at(y, x, c) = v.get<float>();
      }
    }
  }

  ex.positive_text = tokens_from_json(require_key(j, line, "pos_text"), line, "pos_text");
  const json& jneg = require_key(j, line, "neg_texts");
  if (!jneg.is_array()) throw ParseError("record: neg_texts must be an array", key_offset(line, "neg_texts"));
  for (const auto& n : jneg) ex.negative_texts.push_back(tokens_from_json(n, line, "neg_texts"));

  ex.target_mask = mask_from_json(require_key(j, line, "target_rle"), width, height, line, "target_rle");
  const json& jsib = require_key(j, line, "siblings_rle");
  if (!jsib.is_array()) throw ParseError("record: siblings_rle must be an array", key_offset(line, "siblings_rle"));
  for (const auto& s : jsib) ex.sibling_masks.push_back(mask_from_json(s, width, height, line, "siblings_rle"));

  try {
    ex.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("record: ") + e.what(), 0);
  }
  return ex;
}

std::string content_checksum(std::span<const std::string> record_lines) {
  Fnv1a h;
  for (const auto& line : record_lines) {
    h.update(std::as_bytes(std::span(line.data(), line.size())));
    const char nl = '\n';
    h.update(std::as_bytes(std::span(&nl, 1)));
  }
  return "fnv1a64:" + h.hex();
}

std::vector<RISExample> Dataset::train_split() const {
  const std::set<std::size_t> val(header.val_indices.begin(), header.val_indices.end());
  std::vector<RISExample> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!val.contains(i)) out.push_back(examples[i]);
  }
  return out;
}

std::vector<RISExample> Dataset::val_split() const {
  std::vector<RISExample> out;
  for (std::size_t i : header.val_indices) {
    if (i < examples.size()) out.push_back(examples[i]);
  }
  return out;
}

std::string dataset_to_string(Dataset& dataset) {
  std::vector<std::string> lines;
  lines.reserve(dataset.examples.size());
  for (const auto& ex : dataset.examples) lines.push_back(serialize_example(ex));
  dataset.header.checksum = content_checksum(lines);

  json h;
  h["format"] = "refseg-dataset";
  h["version"] = 1;
  h["count"] = dataset.examples.size();
  h["config"] = dataset.header.config;
  h["split"] = {{"val_indices", dataset.header.val_indices}};
  h["checksum"] = dataset.header.checksum;

  std::string out = json{{"header", h}}.dump();
  out.push_back('\n');
  for (const auto& l : lines) {
    out += l;
    out.push_back('\n');
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, Dataset& dataset) {
  const std::string text = dataset_to_string(dataset);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Dataset dataset_from_string(std::string_view text) {
  Dataset ds;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    line = text.substr(pos, nl - pos);
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError("dataset: empty file", 0);
  json hj;
  try {
    hj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("dataset header: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!hj.contains("header") || !hj["header"].is_object()) throw ParseError("dataset: missing header object", 0);
  const json& h = hj["header"];
  if (h.value("format", "") != "refseg-dataset") throw ParseError("dataset: unknown format tag", 0);
  ds.header.config = h.value("config", json::object());
  ds.header.checksum = h.value("checksum", "");
  if (h.contains("split") && h["split"].contains("val_indices")) {
    ds.header.val_indices = h["split"]["val_indices"].get<std::vector<std::size_t>>();
  }
  pos += line.size() + 1;

  std::vector<std::string> lines;
  while (next_line(line)) {
    const std::size_t line_start = pos;
    pos += line.size() + 1;
    if (line.empty()) continue;
    try {
      ds.examples.push_back(deserialize_example(line));
    } catch (const ParseError& e) {
      throw ParseError(std::string("dataset record ") + std::to_string(ds.examples.size()) + ": " + e.what(),
                       line_start + e.byte_offset());
    }
    lines.emplace_back(line);
  }
  if (!ds.header.checksum.empty() && content_checksum(lines) != ds.header.checksum) {
    throw ParseError("dataset: checksum mismatch", 0);
  }
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return dataset_from_string(ss.str());
}

}  // namespace refseg
