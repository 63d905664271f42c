#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptn/network.hpp"

namespace ptn {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

/// "PTNCKPT1", then per tensor: u32 name length, UTF-8 name, u32 rank,
/// rank x u64 extents, f32 data. All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
/// Throws FormatError with the byte offset of the first problem.
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
/// Throws IoError when the file is missing.
NamedTensors load_checkpoint(const std::filesystem::path& path);

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model);
/// Builds `config` and fills it from the file. Throws ConfigError on a layout mismatch.
template <typename T>
Model<T> load_model(const std::filesystem::path& path, const NetworkConfig& config);

}  // namespace ptn
