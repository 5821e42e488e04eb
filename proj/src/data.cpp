#include "lpres/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lpres {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Angle swept by each spiral arm from center to rim.
constexpr double kSpiralTurn = 2.0 * std::numbers::pi;

void transform_row(Eigen::Ref<Vec> row, const AugmentPolicy& policy, SeededRng& rng) {
  switch (policy.kind) {
    case AugmentKind::none:
      return;
    case AugmentKind::gaussian_jitter:
      for (Eigen::Index j = 0; j < row.size(); ++j) row(j) += policy.magnitude * rng.normal();
      return;
    case AugmentKind::random_shift:
      for (Eigen::Index j = 0; j < row.size(); ++j) row(j) += rng.uniform(-policy.magnitude, policy.magnitude);
      return;
    case AugmentKind::flip_sign:
      for (Eigen::Index j = 0; j < row.size(); ++j) {
        if (rng.bernoulli(policy.magnitude)) row(j) = -row(j);
      }
      return;
  }
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.classes = classes;
  out.spec = spec;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[i] = labels[rows[i]];
  }
  return out;
}

Dataset gen_dataset(DatasetKind kind, int samples, int classes, double noise, std::uint64_t seed) {
  if (classes < 2 || samples < classes) {
    throw InputError("gen_dataset: need samples >= classes >= 2, got N=" + std::to_string(samples) +
                     " C=" + std::to_string(classes));
  }
  if (noise < 0.0) throw InputError("gen_dataset: noise must be non-negative");
  if (kind == DatasetKind::csv) throw InputError("gen_dataset: csv datasets are loaded, not generated");

  Dataset data;
  data.classes = classes;
  data.spec = {kind, samples, classes, noise, seed, {}};
  data.features.resize(samples, 2);
  data.labels.resize(static_cast<std::size_t>(samples));

  SeededRng rng(SeededRng::derive(seed, {0x6461746173657473ULL}));
  // Per-class ordinal so spirals are spread along their arm.
  std::vector<int> per_class(static_cast<std::size_t>(classes), 0);
  for (int c = 0; c < classes; ++c) per_class[static_cast<std::size_t>(c)] = (samples - c + classes - 1) / classes;
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);

  for (int i = 0; i < samples; ++i) {
    const int c = i % classes;
    data.labels[static_cast<std::size_t>(i)] = c;
    const double phase = kTwoPi * c / classes;
    double x = 0.0;
    double y = 0.0;
    switch (kind) {
      case DatasetKind::blobs:
        x = 3.0 * std::cos(phase);
        y = 3.0 * std::sin(phase);
        break;
      case DatasetKind::spirals: {
        const int k = seen[static_cast<std::size_t>(c)]++;
        const double t = (k + 0.5) / per_class[static_cast<std::size_t>(c)];
        const double radius = 0.1 + 0.9 * t;
        const double angle = phase + kSpiralTurn * t;
        x = 2.0 * radius * std::cos(angle);
        y = 2.0 * radius * std::sin(angle);
        break;
      }
      case DatasetKind::rings: {
        const double angle = rng.uniform(0.0, kTwoPi);
        x = (1.0 + c) * std::cos(angle);
        y = (1.0 + c) * std::sin(angle);
        break;
      }
      case DatasetKind::csv:
        break;
    }
    data.features(i, 0) = x + noise * rng.normal();
    data.features(i, 1) = y + noise * rng.normal();
  }
  return data;
}

Dataset gen_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::csv) {
    Dataset d = load_csv(spec.csv_path);
    d.spec = spec;
    return d;
  }
  return gen_dataset(spec.kind, spec.samples, spec.classes, spec.noise, spec.seed);
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("load_csv: " + path.string() + " is empty");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t width = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) {
      throw InputError("load_csv: " + path.string() + ":" + std::to_string(line_no) + ": need features and a label");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw InputError("load_csv: " + path.string() + ":" + std::to_string(line_no) + ": ragged row");
    }
    std::vector<double> feats;
    try {
      for (std::size_t j = 0; j + 1 < cells.size(); ++j) feats.push_back(std::stod(cells[j]));
      labels.push_back(std::stoi(cells.back()));
    } catch (const std::exception&) {
      throw InputError("load_csv: " + path.string() + ":" + std::to_string(line_no) + ": not numeric");
    }
    if (labels.back() < 0) throw InputError("load_csv: negative label at line " + std::to_string(line_no));
    rows.push_back(std::move(feats));
  }
  if (rows.empty()) throw InputError("load_csv: " + path.string() + " has no samples");

  Dataset data;
  data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j + 1 < width; ++j) {
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  data.labels = std::move(labels);
  data.classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  data.spec.kind = DatasetKind::csv;
  data.spec.samples = static_cast<int>(rows.size());
  data.spec.classes = data.classes;
  data.spec.csv_path = path;
  return data;
}

TrainTestSplit train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train_test_split: fraction outside (0, 1)");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SeededRng rng(SeededRng::derive(seed, {0x73706c6974ULL}));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {data.subset(train), data.subset(test)};
}

void AugmentPolicy::validate() const {
  if (magnitude < 0.0) throw ConfigError("augment: magnitude must be non-negative");
  if (kind == AugmentKind::flip_sign && magnitude > 1.0) throw ConfigError("augment: flip probability must be <= 1");
  if (ratio && *ratio < 0) throw ConfigError("augment: ratio must be non-negative");
}

Mat augment(const Mat& x, const AugmentPolicy& policy, SeededRng& rng) {
  Mat out = x;
  if (policy.kind == AugmentKind::none) return out;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Vec row = out.row(i);
    transform_row(row, policy, rng);
    out.row(i) = row;
  }
  return out;
}

Mat augment_variant(const Mat& row, const AugmentPolicy& policy, std::uint64_t sample, std::uint64_t variant) {
  SeededRng rng(SeededRng::derive(policy.seed, {sample, variant}));
  return augment(row, policy, rng);
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, int batch_size, std::uint64_t epoch_seed) {
  if (batch_size < 1) throw InputError("batches: batch size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SeededRng rng(epoch_seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
  }
  return out;
}

std::vector<Batch> batches(const Dataset& data, int batch_size, std::uint64_t epoch_seed) {
  std::vector<Batch> out;
  for (const auto& rows : batch_indices(data.size(), batch_size, epoch_seed)) {
    Dataset part = data.subset(rows);
    std::vector<std::uint64_t> ids(rows.begin(), rows.end());
    out.push_back({std::move(part.features), std::move(part.labels), std::move(ids)});
  }
  return out;
}

TrainingStream::TrainingStream(const Dataset& data, AugmentPolicy policy, int batch_size, std::uint64_t seed)
    : data_(&data), policy_(policy), batch_size_(batch_size), seed_(seed) {
  if (data.size() == 0) throw InputError("TrainingStream: empty dataset");
  if (batch_size < 1) throw InputError("TrainingStream: batch size must be >= 1");
  policy_.validate();
}

std::size_t TrainingStream::batches_per_epoch() const {
  const auto bs = static_cast<std::size_t>(batch_size_);
  return (data_->size() + bs - 1) / bs;
}

std::vector<std::vector<std::size_t>> TrainingStream::epoch_order(int epoch) const {
  return batch_indices(data_->size(), batch_size_,
                       SeededRng::derive(seed_, {0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
}

Batch TrainingStream::load(const std::vector<std::size_t>& rows, int epoch) const {
  Batch batch;
  const auto n = static_cast<Eigen::Index>(rows.size());
  batch.features.resize(n, data_->raw_dim());
  batch.labels.resize(rows.size());
  batch.ids.resize(rows.size());
  const auto e = static_cast<std::uint64_t>(epoch);
  const bool augmenting = policy_.kind != AugmentKind::none;
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t i = rows[static_cast<std::size_t>(r)];
    batch.labels[static_cast<std::size_t>(r)] = data_->labels[i];
    const Mat original = data_->features.row(static_cast<Eigen::Index>(i));
    if (!augmenting || (policy_.ratio && *policy_.ratio == 0)) {
      batch.features.row(r) = original;
      batch.ids[static_cast<std::size_t>(r)] = i;
    } else if (policy_.ratio) {
      const auto views = static_cast<std::uint64_t>(*policy_.ratio) + 1;
      const std::uint64_t v = (e + i) % views;
      batch.features.row(r) = v == 0 ? original : augment_variant(original, policy_, i, v);
      batch.ids[static_cast<std::size_t>(r)] = i * views + v;
    } else {
      SeededRng rng(SeededRng::derive(policy_.seed, {0x66726573680aULL, e, i}));
      batch.features.row(r) = augment(original, policy_, rng);
      batch.ids[static_cast<std::size_t>(r)] = e * data_->size() + i;
    }
  }
  return batch;
}

}  // namespace lpres
