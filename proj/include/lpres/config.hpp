#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lpres/data.hpp"
#include "lpres/optim.hpp"
#include "lpres/parallel_trainer.hpp"
#include "lpres/resnet.hpp"

namespace lpres {

enum class RunMode { serial, parallel_penalty, parallel_al, parallel_penalty_auxnet, parallel_penalty_reauxnet };

std::string to_string(RunMode mode);
RunMode parse_mode(const std::string& text);

/// One experiment. Stored on disk as flat `key = value` lines; `#` starts a
/// comment. See RunConfig::keys() for the schema.
struct RunConfig {
  RunMode mode = RunMode::serial;
  ModelSpec model;  // raw_dim and classes are taken from the dataset
  DatasetSpec data;
  double train_fraction = 0.8;
  AugmentPolicy augment;
  SgdConfig sgd;
  ParallelConfig parallel;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/latest";
  bool write_checkpoint = true;
  std::optional<std::filesystem::path> speedup_reference;  // directory of a serial run

  static RunConfig parse(std::istream& in, const std::string& source = "<config>");
  static RunConfig parse_string(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Applies one `key = value` assignment.
  void set(const std::string& key, const std::string& value);

  /// LPRES_OUTPUT_DIR replaces output.dir, LPRES_THREADS replaces train.threads.
  void apply_environment();

  /// Throws ConfigError on inconsistent settings. K = 1 in a parallel mode is allowed.
  void validate() const;

  bool parallel_mode() const { return mode != RunMode::serial; }

  /// Canonical text form; parse(to_text()) reproduces the configuration.
  std::string to_text() const;

  static const std::vector<std::string>& keys();
};

}  // namespace lpres
