#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lpres/tensor.hpp"

namespace lpres {

enum class DatasetKind { blobs, spirals, rings, csv };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::spirals;
  int samples = 600;
  int classes = 3;
  double noise = 0.1;
  std::uint64_t seed = 1;
  std::filesystem::path csv_path;
};

struct Dataset {
  Mat features;             // N x raw_dim
  std::vector<int> labels;  // N entries in [0, classes)
  int classes = 0;
  DatasetSpec spec;

  std::size_t size() const { return labels.size(); }
  Eigen::Index raw_dim() const { return features.cols(); }
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

/// Deterministic 2-D synthetic task. Sample i belongs to class i mod C.
Dataset gen_dataset(DatasetKind kind, int samples, int classes, double noise, std::uint64_t seed);
Dataset gen_dataset(const DatasetSpec& spec);

/// Header row, one sample per line, last column an integer label.
Dataset load_csv(const std::filesystem::path& path);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

TrainTestSplit train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed);

enum class AugmentKind { none, gaussian_jitter, random_shift, flip_sign };

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::none;
  double magnitude = 0.0;         // sigma, max offset, or flip probability depending on kind
  std::optional<int> ratio;       // augmented variants per sample; nullopt = fresh every epoch
  std::uint64_t seed = 7;

  void validate() const;
};

/// Applies a freshly sampled transform to every row.
Mat augment(const Mat& x, const AugmentPolicy& policy, SeededRng& rng);

/// Variant `variant` (>= 1) of sample `sample`: a transform drawn from a
/// seed derived from (policy.seed, sample, variant).
Mat augment_variant(const Mat& row, const AugmentPolicy& policy, std::uint64_t sample, std::uint64_t variant);

struct Batch {
  Mat features;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;  // identity of the presented view, stable across epochs when finite

  Eigen::Index size() const { return features.rows(); }
};

/// Shuffled partition of [0, n) into consecutive groups of batch_size; the last may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, int batch_size, std::uint64_t epoch_seed);

/// One shuffled pass over the dataset without augmentation.
std::vector<Batch> batches(const Dataset& data, int batch_size, std::uint64_t epoch_seed);

/// Epoch-by-epoch mini-batch source over a training set with augmentation.
///
/// Finite ratio r: sample i is presented in epoch e as view v = (e + i) mod (1 + r),
/// v = 0 being the original; view ids are i * (1 + r) + v, so N (1 + r) ids exist.
/// Unbounded ratio: every epoch draws a fresh transform and a fresh id e * N + i.
class TrainingStream {
 public:
  TrainingStream(const Dataset& data, AugmentPolicy policy, int batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const;
  std::vector<std::vector<std::size_t>> epoch_order(int epoch) const;
  Batch load(const std::vector<std::size_t>& rows, int epoch) const;

  const Dataset& data() const { return *data_; }
  const AugmentPolicy& policy() const { return policy_; }
  int batch_size() const { return batch_size_; }

 private:
  const Dataset* data_;
  AugmentPolicy policy_;
  int batch_size_;
  std::uint64_t seed_;
};

}  // namespace lpres
