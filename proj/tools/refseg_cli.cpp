#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "refseg/checkpoint.hpp"
#include "refseg/config.hpp"
#include "refseg/dataset_io.hpp"
#include "refseg/error.hpp"
#include "refseg/plot.hpp"
#include "refseg/synthbench.hpp"
#include "refseg/trainer.hpp"

namespace {

using namespace refseg;

std::vector<RISExample> select_split(const Dataset& ds, const std::string& split) {
  if (split == "all") return ds.examples;
  if (split == "train") return ds.train_split();
  if (split == "val") return ds.val_split();
  throw CLI::ValidationError("--split", "expected all, train or val");
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void log_epoch(const EpochLog& e) {
  spdlog::info("epoch {:3d}  lr {:.1e}  dis {:.5f}  cpcl {:.5f}  tccl {:.5f}  total {:.5f}  ({:.1f}s)", e.epoch,
               e.learning_rate, e.dis, e.cpcl, e.tccl, e.total, e.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring segmentation adapters on frozen toy encoders"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::uint64_t gen_seed = 7;
  std::size_t gen_n = 500;
  double gen_fraction = 0.5;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--n", gen_n, "Number of examples")->capture_default_str();
  gen->add_option("--nta-fraction", gen_fraction, "Share of scenes with same-category instances")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gen->add_option("--out", gen_out, "Output dataset file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train on the training split of a dataset");
  std::string tr_config, tr_data, tr_out, tr_dump = ".";
  std::vector<std::string> tr_set;
  tr->add_option("--config", tr_config, "key=value config file (defaults when omitted)");
  tr->add_option("--set", tr_set, "Extra key=value overrides");
  tr->add_option("--data", tr_data, "Dataset file")->required();
  tr->add_option("--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--dump-dir", tr_dump, "Where to write a batch dump if the loss turns non-finite");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_csv, ev_split = "val";
  bool ev_nta = false;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset file")->required();
  ev->add_option("--split", ev_split, "all, train or val")->capture_default_str();
  ev->add_flag("--nta", ev_nta, "Also score the co-category subset");
  ev->add_option("--out-csv", ev_csv, "CSV report (metric,value,n); stdout when omitted");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate every cell of a grid");
  std::string ab_base, ab_grid, ab_data, ab_csv;
  ab->add_option("--base-config", ab_base, "Base key=value config");
  ab->add_option("--grid", ab_grid, "Grid file, one cell of key=value overrides per line")->required();
  ab->add_option("--data", ab_data, "Dataset file (train split trains, val split scores)")->required();
  ab->add_option("--out-csv", ab_csv, "CSV report")->required();

  // params
  auto* pa = app.add_subcommand("params", "Frozen vs tunable parameter counts");
  std::string pa_ckpt, pa_config;
  auto* pa_ck = pa->add_option("--ckpt", pa_ckpt, "Checkpoint");
  pa->add_option("--config", pa_config, "Config file, used when no checkpoint is given")->excludes(pa_ck);

  // plot
  auto* pl = app.add_subcommand("plot", "Render loss-weight sweep charts (SVG) from a grid CSV");
  std::string pl_csv, pl_dir;
  pl->add_option("--csv", pl_csv, "Grid CSV")->required();
  pl->add_option("--out-dir", pl_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      Dataset ds = synth::generate_dataset(gen_seed, gen_n, gen_fraction);
      write_dataset(gen_out, ds);
      spdlog::info("wrote {} examples ({} validation) to {}  checksum {}", ds.examples.size(),
                   ds.header.val_indices.size(), gen_out, ds.header.checksum);
    } else if (*tr) {
      TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_config(tr_config);
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      const Dataset ds = read_dataset(tr_data);
      const auto train_set = ds.train_split();
      spdlog::info("training on {} examples for {} epochs", train_set.size(), cfg.epochs);
      TrainOptions opts;
      opts.dump_dir = tr_dump;
      opts.on_epoch = log_epoch;
      TrainState s = train(cfg, train_set, opts);
      save_checkpoint(tr_out, s);
      spdlog::info("saved {}", tr_out);
    } else if (*ev) {
      TrainState s = load_checkpoint(ev_ckpt);
      const Dataset ds = read_dataset(ev_data);
      const auto examples = select_split(ds, ev_split);
      const MetricReport r = evaluate(s, examples, ev_nta);
      if (ev_csv.empty()) {
        write_report_csv(std::cout, r);
      } else {
        std::ofstream os(ev_csv);
        if (!os) throw std::runtime_error("cannot write " + ev_csv);
        write_report_csv(os, r);
        spdlog::info("mIoU {:.4f}  oIoU {:.4f}  -> {}", r.miou, r.oiou, ev_csv);
      }
    } else if (*ab) {
      const TrainConfig base = ab_base.empty() ? TrainConfig{} : load_config(ab_base);
      const auto cells = parse_grid(read_text(ab_grid));
      const Dataset ds = read_dataset(ab_data);
      const auto train_set = ds.train_split();
      const auto val_set = ds.val_split();
      std::ofstream os(ab_csv);
      if (!os) throw std::runtime_error("cannot write " + ab_csv);
      os << grid_csv_header() << "\n";
      ablation_grid(base, cells, train_set, val_set, {}, [&](const GridResult& r) {
        os << grid_csv_row(r) << "\n" << std::flush;
        if (r.report) {
          spdlog::info("cell {}: mIoU {:.4f}  NTA-IoU {}  ({:.0f}s)", r.cell.name, r.report->miou,
                       r.report->nta_iou ? std::to_string(*r.report->nta_iou) : "n/a", r.seconds);
        }
      });
    } else if (*pa) {
      if (!pa_ckpt.empty()) {
        const TrainState s = load_checkpoint(pa_ckpt);
        std::cout << params_report(*s.model);
      } else {
        const TrainConfig cfg = pa_config.empty() ? TrainConfig{} : load_config(pa_config);
        const Model m(cfg.model, cfg.seed);
        std::cout << params_report(m);
      }
    } else if (*pl) {
      for (const auto& p : plot_lambda_sweep(read_text(pl_csv), pl_dir)) std::cout << p.string() << "\n";
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
