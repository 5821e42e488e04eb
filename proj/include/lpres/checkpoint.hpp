#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lpres/resnet.hpp"

namespace lpres {

struct NamedTensor {
  std::string name;
  Mat value;
};

/// Versioned binary container of named 64-bit real tensors.
///
/// Layout (little-endian): magic "LPRESCKP", u32 version, u64 count, then per
/// tensor: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<NamedTensor> tensors;

  void add(std::string name, const Mat& value) { tensors.push_back({std::move(name), value}); }
  const Mat& get(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Appends all model tensors under `prefix`.
void append_model(Checkpoint& ckpt, const ResidualModel<double>& model, const std::string& prefix = "model.");

/// Reads model tensors written by append_model into a model of matching shape.
void restore_model(const Checkpoint& ckpt, ResidualModel<double>& model, const std::string& prefix = "model.");

void append_blocks(Checkpoint& ckpt, const std::vector<BlockParams<double>>& blocks, const std::string& prefix);
void restore_blocks(const Checkpoint& ckpt, std::vector<BlockParams<double>>& blocks, const std::string& prefix);

}  // namespace lpres
