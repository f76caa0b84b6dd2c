#pragma once

// Optimisation loop, evaluation and the ablation grid.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "refseg/config.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model.hpp"
#include "refseg/random.hpp"

namespace refseg {

/// First and second moment estimates, one pair per tunable parameter in model order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void reset(std::span<Parameter* const> params);
  /// One update at `lr` using each parameter's accumulated gradient.
  void apply(std::span<Parameter* const> params, double lr);
};

/// Unweighted per-example means over one epoch.
struct EpochLog {
  int epoch = 0;  ///< 1-based
  double dis = 0.0;
  double cpcl = 0.0;
  double tccl = 0.0;
  double total = 0.0;  ///< weighted objective
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  TrainConfig config;
  std::unique_ptr<Model> model;
  AdamState adam;
  int epoch = 0;  ///< completed epochs
  Rng rng;
  std::vector<EpochLog> log;
};

struct TrainOptions {
  /// Stop after this many optimizer steps (unlimited when empty).
  std::optional<std::int64_t> max_steps;
  /// Directory for the diagnostic dump written when a loss turns non-finite.
  std::filesystem::path dump_dir = ".";
  std::function<void(const EpochLog&)> on_epoch;
};

/// Fresh model and optimizer for `cfg`; throws ConfigError on an invalid config.
TrainState init_state(const TrainConfig& cfg);

std::vector<PreparedExample> prepare_examples(const Model& model, std::span<const RISExample> data,
                                              bool with_adapters);

/// Loss terms of one example; the graph lives on `tape`.
struct ExampleLoss {
  ag::Var dis, cpcl, tccl, total;
};
/// `batch` supplies the padding negatives (other examples' positive sentences).
ExampleLoss example_loss(ag::Tape& tape, Model& model, const TrainConfig& cfg, const PreparedExample& ex,
                         std::span<const PreparedExample* const> batch);

/// Runs epochs state.epoch+1 .. state.config.epochs. Throws TrainingError on a non-finite loss.
void train_epochs(TrainState& state, std::span<const PreparedExample> data, const TrainOptions& opts = {});
/// init_state + prepare_examples + train_epochs.
TrainState train(const TrainConfig& cfg, std::span<const RISExample> data, const TrainOptions& opts = {});

/// Inference with positive expressions only.
std::vector<BinaryMask> predict_all(Model& model, std::span<const RISExample> data, bool with_adapters);
MetricReport evaluate(Model& model, bool with_adapters, std::span<const RISExample> data, bool with_nta);
MetricReport evaluate(TrainState& state, std::span<const RISExample> data, bool with_nta);

/// Metric rows: metric, value, n.
void write_report_csv(std::ostream& os, const MetricReport& r);

struct GridResult {
  GridCell cell;
  TrainConfig config;
  std::optional<MetricReport> report;
  double final_loss = 0.0;
  double seconds = 0.0;
  std::string error;  ///< non-empty when the cell failed
};

/// Trains and evaluates every cell on (train, eval); a failing cell is recorded and skipped.
std::vector<GridResult> ablation_grid(const TrainConfig& base, std::span<const GridCell> cells,
                                      std::span<const RISExample> train_data, std::span<const RISExample> eval_data,
                                      const TrainOptions& opts = {},
                                      const std::function<void(const GridResult&)>& on_cell = {});
void write_grid_csv(std::ostream& os, std::span<const GridResult> results);
std::string grid_csv_header();
std::string grid_csv_row(const GridResult& r);

/// Human-readable frozen / tunable split.
std::string params_report(const Model& model);

}  // namespace refseg
