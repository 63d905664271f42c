#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ptn/sampler.hpp"
#include "ptn/tensor.hpp"

namespace ptn {

/// Raw IDX array of unsigned bytes.
struct IdxArray {
  Shape shape;
  std::vector<std::uint8_t> data;
};

/// Parses an IDX byte stream (magic 00 00 08 rank, big-endian u32 extents, u8 data).
/// Throws FormatError naming the byte offset of the first problem.
IdxArray parse_idx_bytes(std::span<const std::uint8_t> bytes);
/// As above, scaled to [0, 1].
Tensor<float> parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx(const Shape& shape, std::span<const std::uint8_t> data);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Grayscale images stored as bytes (value / 255 gives the [0, 1] intensity).
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<Sim2Params> provenance;            // one per item when generated
  std::vector<std::array<double, 2>> placement;  // shift as a fraction of its admissible range

  std::size_t size() const { return labels.size(); }
  /// N x 1 x H x W floats for the given item indices.
  Tensor<float> images(std::span<const std::size_t> indices) const;
  Tensor<float> image(std::size_t index) const;
  Dataset slice(std::size_t begin, std::size_t count) const;
  void append(const Dataset& other);
};

/// Parses whitespace-separated amat text: 784 intensities then a label per line.
/// Throws FormatError naming the line on a column-count or label problem.
Dataset parse_amat(const std::string& text);

/// Loads the four canonical MNIST IDX files from `dir` and concatenates train then test.
struct MnistPool {
  Dataset train;
  Dataset test;
  Dataset all() const;
};
MnistPool load_mnist(const std::filesystem::path& dir);

enum class Placement { centered, anywhere };

struct DatasetSpec {
  std::string name;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t canvas = 28;
  double angle_min = 0.0;
  double angle_max = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
  Placement placement = Placement::centered;
  std::uint64_t seed = 0;
  /// Digits for train/val come from the combined pool starting at 0; test digits follow.
  bool pooled = true;

  /// rotmnist, mnist-r, mnist-rts or sim2mnist. Throws ConfigError otherwise.
  static DatasetSpec preset(const std::string& name);
};

struct GeneratedDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Renders `count` items from base digits `first`, `first + 1`, ... Item i draws
/// its SIM(2) parameters from a stream keyed by (spec.seed, split_id, i), so the
/// result does not depend on scheduling. Throws GenerationError if a transformed
/// digit cannot fit on the canvas.
Dataset generate_split(const DatasetSpec& spec, const Dataset& base, std::size_t split_id, std::size_t first,
                       std::size_t count);
GeneratedDataset generate(const DatasetSpec& spec, const MnistPool& mnist);

/// Writes `<prefix>-images-idx3-ubyte`, `<prefix>-labels-idx1-ubyte` and, when
/// provenance is present, `<prefix>-provenance.csv` into `dir`.
void save_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& prefix);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& prefix);

/// Kolmogorov-Smirnov distance between a sample and the uniform law on [lo, hi].
double ks_uniform(std::vector<double> sample, double lo, double hi);

}  // namespace ptn
