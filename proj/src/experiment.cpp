#include "lpres/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "lpres/checkpoint.hpp"
#include "lpres/serial_trainer.hpp"

namespace lpres {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json timings_json(const PhaseTimings& t) {
  return {{"T_d", t.data_load}, {"T_f", t.forward}, {"T_b", t.backward},
          {"t_psi", t.psi},     {"t_aux_f", t.aux_forward}, {"t_aux_b", t.aux_backward}};
}

PhaseTimings timings_from_json(const json& j) {
  PhaseTimings t;
  t.data_load = j.at("T_d").get<double>();
  t.forward = j.at("T_f").get<double>();
  t.backward = j.at("T_b").get<double>();
  t.psi = j.at("t_psi").get<double>();
  t.aux_forward = j.at("t_aux_f").get<double>();
  t.aux_backward = j.at("t_aux_b").get<double>();
  return t;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

ParallelConfig parallel_config_for(const RunConfig& cfg, std::uint64_t seed) {
  ParallelConfig p = cfg.parallel;
  p.relaxation = cfg.mode == RunMode::parallel_al ? Relaxation::augmented_lagrangian : Relaxation::penalty;
  p.source = cfg.mode == RunMode::parallel_penalty_auxnet     ? LambdaSource::auxnet
             : cfg.mode == RunMode::parallel_penalty_reauxnet ? LambdaSource::reauxnet
                                                              : LambdaSource::persistent;
  p.seed = seed;
  return p;
}

PhaseTimings average(const std::vector<EpochMetrics>& epochs, double& seconds) {
  const std::size_t first = epochs.size() > 1 ? 1 : 0;
  PhaseTimings t;
  seconds = 0.0;
  for (std::size_t e = first; e < epochs.size(); ++e) {
    const auto& x = epochs[e].timings;
    t.data_load += x.data_load;
    t.forward += x.forward;
    t.backward += x.backward;
    t.psi += x.psi;
    t.aux_forward += x.aux_forward;
    t.aux_backward += x.aux_backward;
    seconds += epochs[e].seconds;
  }
  const double n = static_cast<double>(epochs.size() - first);
  for (double* v : {&t.data_load, &t.forward, &t.backward, &t.psi, &t.aux_forward, &t.aux_backward}) *v /= n;
  seconds /= n;
  return t;
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "epoch", "train_loss", "train_accuracy", "test_accuracy", "violation_mean", "violation_max",
      "distill_loss", "lr", "beta", "aux_bytes",
      "t_data", "t_forward", "t_backward", "t_psi", "t_aux_forward", "t_aux_backward", "epoch_seconds"};
  return cols;
}

std::size_t timing_column_start() { return 10; }

std::string format_metrics_row(const EpochMetrics& m) {
  const auto& t = m.timings;
  std::string line = std::to_string(m.epoch);
  for (double v : {m.train_loss, m.train_accuracy, m.test_accuracy, m.violation_mean, m.violation_max,
                   m.distill_loss, m.lr, m.beta, m.aux_bytes, t.data_load, t.forward, t.backward, t.psi,
                   t.aux_forward, t.aux_backward, m.seconds}) {
    line += ',';
    line += num(v);
  }
  return line;
}

std::size_t MetricsTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw UsageError("unknown metrics field '" + name + "'");
}

MetricsTable read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing metrics file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  MetricsTable table;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final record
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (first) {
      while (std::getline(ss, cell, ',')) table.header.push_back(cell);
      first = false;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InputError(path.string() + ": malformed value '" + cell + "'");
      }
    }
    if (row.size() != table.header.size()) throw InputError(path.string() + ": row width differs from header");
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw InputError(path.string() + ": no header");
  return table;
}

RunResult run_experiment(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const Dataset full = cfg.data.kind == DatasetKind::csv ? load_csv(cfg.data.csv_path) : gen_dataset(cfg.data);
  const TrainTestSplit split = train_test_split(full, cfg.train_fraction, cfg.data.seed);

  ModelSpec spec = cfg.model;
  spec.raw_dim = full.raw_dim();
  spec.classes = full.classes;
  SeededRng init_rng(SeededRng::derive(cfg.seed, {0x11ULL}));
  auto model = init_model<double>(spec, init_rng);
  const TrainingStream stream(split.train, cfg.augment, cfg.sgd.batch_size, SeededRng::derive(cfg.seed, {0x22ULL}));

  std::ofstream metrics;
  if (opts.write_files) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "config.txt") << cfg.to_text();
    metrics.open(cfg.output_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw ConfigError("cannot write " + (cfg.output_dir / "metrics.csv").string());
    std::string header;
    for (const auto& c : metrics_columns()) header += (header.empty() ? "" : ",") + c;
    metrics << header << '\n' << std::flush;
  }

  std::optional<SerialTrainer> serial;
  std::optional<ParallelTrainer> parallel;
  if (cfg.parallel_mode()) {
    parallel.emplace(model, cfg.sgd, parallel_config_for(cfg, SeededRng::derive(cfg.seed, {0x33ULL})));
  } else {
    serial.emplace(model, cfg.sgd);
  }

  RunResult result;
  for (int e = 0; e < cfg.sgd.epochs; ++e) {
    EpochMetrics m;
    m.epoch = e;
    if (serial) {
      auto ep = serial->train_epoch(stream, e);
      m.lr = serial->last_lr();
      m.timings = ep.timings;
      m.seconds = ep.seconds;
      model = serial->model();
    } else {
      auto ep = parallel->train_epoch(stream, e);
      m.lr = ep.lr;
      m.beta = ep.beta;
      m.violation_mean = ep.violation_mean;
      m.violation_max = ep.violation_max;
      m.distill_loss = ep.distill_loss;
      m.aux_bytes = static_cast<double>(parallel->persistent_aux_bytes());
      m.timings = ep.timings;
      m.seconds = ep.seconds;
      model = parallel->assemble();
    }
    const auto train_eval = evaluate(model, split.train);
    const auto test_eval = evaluate(model, split.test);
    m.train_loss = train_eval.loss;
    m.train_accuracy = train_eval.accuracy;
    m.test_accuracy = test_eval.accuracy;
    if (!std::isfinite(m.train_loss)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(e), e, -1);
    }
    if (opts.write_files) metrics << format_metrics_row(m) << '\n' << std::flush;
    if (opts.log != nullptr) {
      *opts.log << "epoch " << e << " loss " << num(m.train_loss) << " test_acc " << m.test_accuracy;
      if (cfg.parallel_mode()) *opts.log << " violation " << m.violation_mean;
      *opts.log << '\n';
    }
    result.epochs.push_back(m);
  }

  auto& s = result.summary;
  s.mode = to_string(cfg.mode);
  s.stages = cfg.parallel_mode() ? cfg.parallel.stages : 1;
  s.epochs = cfg.sgd.epochs;
  s.last = result.epochs.back();
  s.mean_timings = average(result.epochs, s.mean_epoch_seconds);
  s.persistent_aux_bytes = parallel ? parallel->persistent_aux_bytes() : 0;

  PhaseTimings model_timings = s.mean_timings;
  if (cfg.speedup_reference) {
    const json ref = read_json(*cfg.speedup_reference / "summary.json");
    const PhaseTimings rt = timings_from_json(ref.at("mean_timings"));
    model_timings.data_load = rt.data_load;
    model_timings.forward = rt.forward;
    model_timings.backward = rt.backward;
    const double ref_seconds = ref.at("mean_epoch_seconds").get<double>();
    if (s.mean_epoch_seconds > 0.0) s.measured_speedup = ref_seconds / s.mean_epoch_seconds;
  }
  s.predicted_speedup = predict_speedup(model_timings, s.stages);
  s.upper_bound = speedup_upper_bound(model_timings);
  result.model = model;

  if (opts.write_files) {
    json j;
    j["mode"] = s.mode;
    j["stages"] = s.stages;
    j["epochs"] = s.epochs;
    j["final"] = {{"train_loss", s.last.train_loss},         {"train_accuracy", s.last.train_accuracy},
                  {"test_accuracy", s.last.test_accuracy},   {"violation_mean", s.last.violation_mean},
                  {"violation_max", s.last.violation_max},   {"distill_loss", s.last.distill_loss}};
    j["mean_timings"] = timings_json(s.mean_timings);
    j["mean_epoch_seconds"] = s.mean_epoch_seconds;
    j["predicted_speedup"] = s.predicted_speedup;
    j["speedup_upper_bound"] = s.upper_bound.unbounded ? json(nullptr) : json(s.upper_bound.value);
    j["speedup_unbounded"] = s.upper_bound.unbounded;
    j["measured_speedup"] = s.measured_speedup ? json(*s.measured_speedup) : json(nullptr);
    j["persistent_aux_bytes"] = s.persistent_aux_bytes;
    std::ofstream(cfg.output_dir / "summary.json") << j.dump(2) << '\n';

    if (cfg.write_checkpoint) {
      Checkpoint ckpt;
      append_model(ckpt, model);
      if (parallel) {
        for (std::size_t k = 0; k < parallel->auxnets().size(); ++k) {
          append_blocks(ckpt, parallel->auxnets()[k].blocks, "auxnet." + std::to_string(k) + ".");
        }
        const auto& segments = parallel->reauxnet().segments();
        for (std::size_t k = 0; k < segments.size(); ++k) {
          append_blocks(ckpt, segments[k].blocks, "reauxnet." + std::to_string(k) + ".");
        }
      }
      ckpt.save(cfg.output_dir / "model.ckpt");
    }
  }
  return result;
}

ComparisonReport compare_runs(const std::vector<std::filesystem::path>& dirs) {
  if (dirs.size() < 2) throw UsageError("compare: need at least two run directories");
  ComparisonReport report;
  std::vector<std::string> schema;
  for (const auto& dir : dirs) {
    const auto table = read_metrics_csv(dir / "metrics.csv");
    if (schema.empty()) {
      schema = table.header;
    } else if (table.header != schema) {
      throw InputError("compare: " + (dir / "metrics.csv").string() + " has an incompatible metrics schema");
    }
    if (table.rows.empty()) throw InputError("compare: " + (dir / "metrics.csv").string() + " has no epochs");
    const json summary = read_json(dir / "summary.json");
    const auto& last = table.rows.back();
    ComparisonRow row;
    row.dir = dir;
    row.mode = summary.at("mode").get<std::string>();
    row.test_accuracy = last[table.column("test_accuracy")];
    row.violation_mean = last[table.column("violation_mean")];
    row.predicted_speedup = summary.at("predicted_speedup").get<double>();
    if (!summary.at("measured_speedup").is_null()) row.measured_speedup = summary.at("measured_speedup").get<double>();
    report.rows.push_back(std::move(row));
  }
  for (auto& row : report.rows) {
    row.delta_accuracy = row.test_accuracy - report.rows.front().test_accuracy;
    row.delta_violation = row.violation_mean - report.rows.front().violation_mean;
  }
  return report;
}

std::string ComparisonReport::to_text() const {
  std::ostringstream os;
  char line[512];
  std::snprintf(line, sizeof line, "%-28s %-26s %9s %9s %11s %11s %9s %9s\n", "run", "mode", "test_acc", "d_acc",
                "violation", "d_violation", "pred_rho", "meas_rho");
  os << line;
  for (const auto& r : rows) {
    char measured[32] = "-";
    if (r.measured_speedup) std::snprintf(measured, sizeof measured, "%.3f", *r.measured_speedup);
    std::snprintf(line, sizeof line, "%-28s %-26s %9.4f %+9.4f %11.4g %+11.4g %9.3f %9s\n",
                  (r.dir.has_filename() ? r.dir.filename() : r.dir.parent_path().filename()).string().c_str(), r.mode.c_str(), r.test_accuracy, r.delta_accuracy,
                  r.violation_mean, r.delta_violation, r.predicted_speedup, measured);
    os << line;
  }
  return os.str();
}

}  // namespace lpres
