#include "refseg/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refseg/error.hpp"

namespace refseg {

void AdamState::reset(std::span<Parameter* const> params) {
  step = 0;
  m.clear();
  v.clear();
  for (const Parameter* p : params) {
    m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamState::apply(std::span<Parameter* const> params, double lr) {
  if (m.size() != params.size()) throw InvalidInput("AdamState: parameter list changed");
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    m[k] = beta1 * m[k] + (1.0 - beta1) * p.grad;
    v[k] = beta2 * v[k] + (1.0 - beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m[k].array() / c1) / ((v[k].array() / c2).sqrt() + eps);
  }
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.model = std::make_unique<Model>(cfg.model, cfg.seed);
  s.rng = Rng(derive_seed(cfg.seed, 2));
  auto params = s.model->tunable_parameters();
  s.adam.reset(params);
  return s;
}

std::vector<PreparedExample> prepare_examples(const Model& model, std::span<const RISExample> data,
                                              bool with_adapters) {
  std::vector<PreparedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(model.prepare(ex, with_adapters));
  return out;
}

ExampleLoss example_loss(ag::Tape& t, Model& model, const TrainConfig& cfg, const PreparedExample& ex,
                         std::span<const PreparedExample* const> batch) {
  const Model::Forward f = model.forward(t, ex);
  ExampleLoss l;
  l.dis = dis_loss(t, f.pixel_logits, ex.target);
  const ag::Var zero = t.constant(Matrix::Zero(1, 1));
  l.cpcl = cfg.flags.use_cpcl ? tlm::cpcl_loss(t, f.fused_features, f.sentence) : zero;
  l.tccl = zero;
  if (cfg.flags.use_tccl) {
    const auto k = static_cast<std::size_t>(cfg.model.tlm.k_negatives);
    std::vector<ag::Var> negatives;
    for (const auto& n : ex.negatives) {
      if (negatives.size() == k) break;
      negatives.push_back(model.project_sentence(t, n.sentence));
    }
    // Pad with the positive sentences of the other batch members, starting after this one.
    const auto self = std::find(batch.begin(), batch.end(), &ex);
    const std::size_t start = self == batch.end() ? 0 : static_cast<std::size_t>(self - batch.begin()) + 1;
    for (std::size_t s = 0; s < batch.size() && negatives.size() < k; ++s) {
      const PreparedExample* other = batch[(start + s) % batch.size()];
      if (other == &ex) continue;
      negatives.push_back(model.project_sentence(t, other->positive.sentence));
    }
    l.tccl = tlm::tccl_loss(t, f.prototype, f.sentence, negatives);
  }
  LossWeights w = cfg.weights;
  if (!cfg.flags.use_cpcl) w.lambda_cpcl = 0.0;
  if (!cfg.flags.use_tccl) w.lambda_tccl = 0.0;
  l.total = total_loss(t, l.dis, l.cpcl, l.tccl, w);
  return l;
}

namespace {

double learning_rate_for(const TrainConfig& cfg, int epoch) {
  return epoch - 1 >= cfg.decay_epoch() ? cfg.learning_rate * cfg.lr_decay_factor : cfg.learning_rate;
}

struct BatchRecord {
  std::size_t index;
  double dis, cpcl, tccl, total;
};

[[noreturn]] void fail_non_finite(const TrainOptions& opts, int epoch, std::int64_t step,
                                  std::span<const PreparedExample> data, const std::vector<BatchRecord>& records) {
  nlohmann::json dump;
  dump["epoch"] = epoch;
  dump["step"] = step;
  dump["batch"] = nlohmann::json::array();
  for (const auto& r : records) {
    const RISExample& ex = *data[r.index].example;
    dump["batch"].push_back({{"index", r.index},
                             {"dis", std::isfinite(r.dis) ? nlohmann::json(r.dis) : nlohmann::json(std::to_string(r.dis))},
                             {"cpcl", std::isfinite(r.cpcl) ? nlohmann::json(r.cpcl) : nlohmann::json(std::to_string(r.cpcl))},
                             {"tccl", std::isfinite(r.tccl) ? nlohmann::json(r.tccl) : nlohmann::json(std::to_string(r.tccl))},
                             {"pos_text", ex.positive_text},
                             {"category", ex.category_id},
                             {"target_area", ex.target_mask.area()}});
  }
  std::string where = "(dump not written)";
  std::error_code ec;
  std::filesystem::create_directories(opts.dump_dir, ec);
  const auto path = opts.dump_dir / ("nonfinite_epoch" + std::to_string(epoch) + "_step" + std::to_string(step) + ".json");
  if (std::ofstream os(path); os) {
    os << dump.dump(2) << "\n";
    where = path.string();
  }
  throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                      "; batch dump: " + where);
}

}  // namespace

void train_epochs(TrainState& state, std::span<const PreparedExample> data, const TrainOptions& opts) {
  const TrainConfig& cfg = state.config;
  if (cfg.epochs > state.epoch && data.empty()) throw InvalidInput("train: empty dataset");
  Model& model = *state.model;
  const std::vector<Parameter*> params = model.tunable_parameters();
  if (state.adam.m.size() != params.size()) state.adam.reset(params);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::int64_t steps_taken = 0;

  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = learning_rate_for(cfg, epoch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);

    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = lr;
    std::size_t seen = 0;
    bool stopped = false;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + batch_size);
      std::vector<const PreparedExample*> batch;
      for (std::size_t k = b0; k < b1; ++k) batch.push_back(&data[order[k]]);
      for (Parameter* p : params) p->zero_grad();

      std::vector<BatchRecord> records;
      const double inv = 1.0 / static_cast<double>(batch.size());
      bool finite = true;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        ag::Tape t;
        const ExampleLoss l = example_loss(t, model, cfg, *batch[k], batch);
        BatchRecord r{order[b0 + k], t.scalar(l.dis), t.scalar(l.cpcl), t.scalar(l.tccl), t.scalar(l.total)};
        records.push_back(r);
        if (!std::isfinite(r.total)) {
          finite = false;
          continue;
        }
        t.backward(ag::scale(t, l.total, inv));
      }
      if (!finite) fail_non_finite(opts, epoch, state.adam.step + 1, data, records);
      state.adam.apply(params, lr);
      for (const auto& r : records) {
        log.dis += r.dis;
        log.cpcl += r.cpcl;
        log.tccl += r.tccl;
        log.total += r.total;
      }
      seen += records.size();
      ++steps_taken;
      if (opts.max_steps && steps_taken >= *opts.max_steps) {
        stopped = true;
        break;
      }
    }
    if (stopped) return;
    const double n = static_cast<double>(std::max<std::size_t>(seen, 1));
    log.dis /= n;
    log.cpcl /= n;
    log.tccl /= n;
    log.total /= n;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.log.push_back(log);
    state.epoch = epoch;
    if (opts.on_epoch) opts.on_epoch(log);
  }
}

TrainState train(const TrainConfig& cfg, std::span<const RISExample> data, const TrainOptions& opts) {
  TrainState s = init_state(cfg);
  const auto prepared = prepare_examples(*s.model, data, cfg.flags.use_rca);
  train_epochs(s, prepared, opts);
  return s;
}

std::vector<BinaryMask> predict_all(Model& model, std::span<const RISExample> data, bool with_adapters) {
  std::vector<BinaryMask> preds;
  preds.reserve(data.size());
  for (const auto& ex : data) preds.push_back(model.predict(model.prepare(ex, with_adapters)));
  return preds;
}

MetricReport evaluate(Model& model, bool with_adapters, std::span<const RISExample> data, bool with_nta) {
  if (data.empty()) throw InvalidInput("evaluate: empty dataset");
  const auto preds = predict_all(model, data, with_adapters);
  return score_predictions(preds, data, with_nta);
}

MetricReport evaluate(TrainState& state, std::span<const RISExample> data, bool with_nta) {
  return evaluate(*state.model, state.config.flags.use_rca, data, with_nta);
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

void write_report_csv(std::ostream& os, const MetricReport& r) {
  os << "metric,value,n\n";
  os << "miou," << num(r.miou) << "," << r.n_examples << "\n";
  os << "oiou," << num(r.oiou) << "," << r.n_examples << "\n";
  for (const auto& [x, v] : r.prec_at) os << "prec@" << num(x) << "," << num(v) << "," << r.n_examples << "\n";
  os << "nta_iou," << (r.nta_iou ? num(*r.nta_iou) : std::string("n/a")) << "," << r.n_nta_defined << "\n";
  os << "nta_eligible," << r.n_nta_eligible << "," << r.n_examples << "\n";
}

std::vector<GridResult> ablation_grid(const TrainConfig& base, std::span<const GridCell> cells,
                                      std::span<const RISExample> train_data, std::span<const RISExample> eval_data,
                                      const TrainOptions& opts, const std::function<void(const GridResult&)>& on_cell) {
  std::vector<GridResult> results;
  for (const auto& cell : cells) {
    GridResult r;
    r.cell = cell;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.config = apply_cell(base, cell);
      TrainState s = train(r.config, train_data, opts);
      r.final_loss = s.log.empty() ? 0.0 : s.log.back().total;
      r.report = evaluate(s, eval_data, true);
    } catch (const std::exception& e) {
      r.error = e.what();
      spdlog::warn("grid cell '{}' failed: {}", cell.name, e.what());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_cell) on_cell(r);
    results.push_back(std::move(r));
  }
  return results;
}

std::string grid_csv_header() {
  return "cell,use_rca,use_cpcl,use_tccl,variant,lambda_cpcl,lambda_tccl,seed,epochs,miou,oiou,nta_iou,"
         "prec@0.5,prec@0.7,prec@0.9,n_eval,n_nta_defined,final_loss,runtime_s,status";
}

std::string grid_csv_row(const GridResult& r) {
  const TrainConfig& c = r.config;
  std::ostringstream os;
  os << csv_escape(r.cell.name) << "," << c.flags.use_rca << "," << c.flags.use_cpcl << "," << c.flags.use_tccl << ","
     << to_string(c.model.rca.variant) << "," << num(c.weights.lambda_cpcl) << "," << num(c.weights.lambda_tccl) << ","
     << c.seed << "," << c.epochs << ",";
  if (r.report) {
    const MetricReport& m = *r.report;
    auto prec = [&](double x) {
      auto it = m.prec_at.find(x);
      return it == m.prec_at.end() ? std::string() : num(it->second);
    };
    os << num(m.miou) << "," << num(m.oiou) << "," << (m.nta_iou ? num(*m.nta_iou) : std::string("n/a")) << ","
       << prec(0.5) << "," << prec(0.7) << "," << prec(0.9) << "," << m.n_examples << "," << m.n_nta_defined << ",";
  } else {
    os << ",,,,,,,,";
  }
  os << num(r.final_loss) << "," << num(r.seconds) << "," << (r.error.empty() ? "ok" : csv_escape("failed: " + r.error));
  return os.str();
}

void write_grid_csv(std::ostream& os, std::span<const GridResult> results) {
  os << grid_csv_header() << "\n";
  for (const auto& r : results) os << grid_csv_row(r) << "\n";
}

std::string params_report(const Model& model) {
  const ParameterCounts c = model.parameter_counts();
  std::ostringstream os;
  os << "frozen.vision " << c.frozen_vision << "\n"
     << "frozen.text " << c.frozen_text << "\n"
     << "frozen.total " << c.frozen() << "\n"
     << "tunable.backbone_adjacent(rca) " << c.rca << "\n"
     << "tunable.other(tlm) " << c.tlm << "\n"
     << "tunable.other(decoder) " << c.decoder << "\n"
     << "tunable.total " << c.tunable() << "\n"
     << "ratio.frozen_over_tunable " << std::fixed << std::setprecision(2)
     << static_cast<double>(c.frozen()) / static_cast<double>(std::max<std::size_t>(c.tunable(), 1)) << "\n";
  return os.str();
}

}  // namespace refseg
