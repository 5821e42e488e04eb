#include "lpres/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lpres {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'R', 'E', 'S', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError("checkpoint " + path.string() + ": truncated");
  return value;
}

template <typename Derived>
Mat as_mat(const Eigen::MatrixBase<Derived>& t) {
  return Mat(t);
}

const char* const kBlockFields[] = {"W1", "b1", "W2", "b2"};

}  // namespace

const Mat& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw InputError("checkpoint: no tensor named '" + name + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.value.size())));
  }
  if (!out) throw InputError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InputError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw InputError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto count = take<std::uint64_t>(in, path);
  Checkpoint ckpt;
  ckpt.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = take<std::uint64_t>(in, path);
    const auto cols = take<std::uint64_t>(in, path);
    Mat value(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!in) throw InputError("checkpoint " + path.string() + ": truncated tensor '" + name + "'");
    ckpt.tensors.push_back({std::move(name), std::move(value)});
  }
  return ckpt;
}

void append_blocks(Checkpoint& ckpt, const std::vector<BlockParams<double>>& blocks, const std::string& prefix) {
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    int field = 0;
    zip_fields(
        [&](const auto& t) {
          ckpt.add(prefix + std::to_string(l) + "." + kBlockFields[field++], as_mat(t));
        },
        blocks[l]);
  }
}

void restore_blocks(const Checkpoint& ckpt, std::vector<BlockParams<double>>& blocks, const std::string& prefix) {
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    int field = 0;
    zip_fields(
        [&](auto& t) {
          const std::string name = prefix + std::to_string(l) + "." + kBlockFields[field++];
          const Mat& stored = ckpt.get(name);
          if (stored.rows() != t.rows() || stored.cols() != t.cols()) {
            throw DimensionError("checkpoint: '" + name + "' is " + shape_of(stored) + ", expected " + shape_of(t));
          }
          t = stored;
        },
        blocks[l]);
  }
}

void append_model(Checkpoint& ckpt, const ResidualModel<double>& model, const std::string& prefix) {
  ckpt.add(prefix + "input.weight", model.input_map.weight);
  ckpt.add(prefix + "input.bias", as_mat(model.input_map.bias));
  append_blocks(ckpt, model.blocks, prefix + "blocks.");
  ckpt.add(prefix + "output.weight", model.output_map.weight);
  ckpt.add(prefix + "output.bias", as_mat(model.output_map.bias));
  Mat scale(1, 1);
  scale(0, 0) = model.residual_scale;
  ckpt.add(prefix + "residual_scale", scale);
}

void restore_model(const Checkpoint& ckpt, ResidualModel<double>& model, const std::string& prefix) {
  auto restore = [&](const std::string& name, auto& t) {
    const Mat& stored = ckpt.get(prefix + name);
    if (stored.rows() != t.rows() || stored.cols() != t.cols()) {
      throw DimensionError("checkpoint: '" + prefix + name + "' is " + shape_of(stored) + ", expected " + shape_of(t));
    }
    t = stored;
  };
  restore("input.weight", model.input_map.weight);
  restore("input.bias", model.input_map.bias);
  restore_blocks(ckpt, model.blocks, prefix + "blocks.");
  restore("output.weight", model.output_map.weight);
  restore("output.bias", model.output_map.bias);
  model.residual_scale = ckpt.get(prefix + "residual_scale")(0, 0);
}

}  // namespace lpres
