#include "refseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "refseg/error.hpp"

namespace refseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void doubles(const Matrix& m) {
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void doubles(Matrix& m) {
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
    need(n);
    std::memcpy(m.data(), in_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw ParseError("checkpoint: truncated", pos_);
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_to_bytes(const TrainState& state) {
  Writer w;
  for (char c : kCheckpointMagic) w.pod(c);
  w.pod(kCheckpointVersion);
  w.str(to_config_string(state.config));
  w.pod<std::int32_t>(state.epoch);
  w.pod<std::int64_t>(state.adam.step);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());

  const auto params = std::as_const(*state.model).tunable_parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    w.str(p.name);
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(p.value.rows()));
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(p.value.cols()));
    w.doubles(p.value);
    const bool have_moments = k < state.adam.m.size();
    w.doubles(have_moments ? state.adam.m[k] : Matrix::Zero(p.value.rows(), p.value.cols()).eval());
    w.doubles(have_moments ? state.adam.v[k] : Matrix::Zero(p.value.rows(), p.value.cols()).eval());
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(state.log.size()));
  for (const auto& e : state.log) {
    w.pod<std::int32_t>(e.epoch);
    for (double d : {e.dis, e.cpcl, e.tccl, e.total, e.learning_rate, e.seconds}) w.pod(d);
  }
  return w.take();
}

TrainState checkpoint_from_bytes(std::string_view bytes) {
  Reader r(bytes);
  for (char c : kCheckpointMagic) {
    if (r.pod<char>() != c) throw ParseError("checkpoint: bad magic header", 0);
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version), r.pos() - 4);
  }
  const std::size_t cfg_at = r.pos();
  TrainConfig cfg;
  try {
    cfg = parse_config(r.str());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), cfg_at);
  }
  TrainState s = init_state(cfg);
  s.epoch = r.pod<std::int32_t>();
  s.adam.step = r.pod<std::int64_t>();
  std::istringstream rng(r.str());
  rng >> s.rng;
  if (!rng) throw ParseError("checkpoint: bad RNG state", r.pos());

  auto params = s.model->tunable_parameters();
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size()) throw ParseError("checkpoint: tensor count does not match the model", r.pos() - 4);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const std::size_t at = r.pos();
    const std::string name = r.str();
    const auto rows = r.pod<std::uint64_t>();
    const auto cols = r.pod<std::uint64_t>();
    if (name != p.name || rows != static_cast<std::uint64_t>(p.value.rows()) ||
        cols != static_cast<std::uint64_t>(p.value.cols())) {
      throw ParseError("checkpoint: tensor '" + name + "' does not match model tensor '" + p.name + "'", at);
    }
    r.doubles(p.value);
    r.doubles(s.adam.m[k]);
    r.doubles(s.adam.v[k]);
  }
  const auto logs = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < logs; ++i) {
    EpochLog e;
    e.epoch = r.pod<std::int32_t>();
    for (double* d : {&e.dis, &e.cpcl, &e.tccl, &e.total, &e.learning_rate, &e.seconds}) *d = r.pod<double>();
    s.log.push_back(e);
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes", r.pos());
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const std::string bytes = checkpoint_to_bytes(state);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace refseg
