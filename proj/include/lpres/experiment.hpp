#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lpres/config.hpp"
#include "lpres/speedup.hpp"

namespace lpres {

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;  // full layer-serial forward pass over the training split
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double violation_mean = 0.0;
  double violation_max = 0.0;
  double distill_loss = 0.0;
  double lr = 0.0;
  double beta = 0.0;
  double aux_bytes = 0.0;
  PhaseTimings timings;
  double seconds = 0.0;  // training time of the epoch, evaluation excluded
};

/// CSV header of metrics.csv. Timing columns come last, from timing_column_start().
const std::vector<std::string>& metrics_columns();
std::size_t timing_column_start();
std::string format_metrics_row(const EpochMetrics& m);

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;  // throws UsageError for unknown names
};

/// Reads complete lines of a metrics file; a torn trailing line is ignored.
MetricsTable read_metrics_csv(const std::filesystem::path& path);

struct RunSummary {
  std::string mode;
  int stages = 1;
  int epochs = 0;
  EpochMetrics last;
  PhaseTimings mean_timings;  // epochs after the first when there are several
  double mean_epoch_seconds = 0.0;
  double predicted_speedup = 1.0;
  SpeedupBound upper_bound{0.0, false};
  std::optional<double> measured_speedup;  // requires speedup.reference
  std::size_t persistent_aux_bytes = 0;
};

struct RunResult {
  std::vector<EpochMetrics> epochs;
  RunSummary summary;
  ResidualModel<double> model;
};

struct RunOptions {
  bool write_files = true;
  std::ostream* log = nullptr;
};

/// Trains the configured model and records one EpochMetrics per epoch. Files
/// written to output.dir: metrics.csv (flushed per epoch), summary.json,
/// config.txt and, unless disabled, model.ckpt.
RunResult run_experiment(const RunConfig& cfg, const RunOptions& opts = {});

struct ComparisonRow {
  std::filesystem::path dir;
  std::string mode;
  double test_accuracy = 0.0;
  double violation_mean = 0.0;
  double predicted_speedup = 0.0;
  std::optional<double> measured_speedup;
  double delta_accuracy = 0.0;   // relative to the first run
  double delta_violation = 0.0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::string to_text() const;
};

ComparisonReport compare_runs(const std::vector<std::filesystem::path>& dirs);

}  // namespace lpres
