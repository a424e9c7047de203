#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dermnet/model.hpp"

namespace dermnet {

// DWSN weight file, all integers little-endian:
//   [0,4)    magic "DWSN"
//   [4,8)    u32 version (1)
//   [8,16)   u64 header length L
//   [16,16+L) UTF-8 JSON array of records
//             {"name", "dtype": "f32", "shape": [...], "offset", "length"}
//   payload  raw f32 values, row-major; offsets are relative to payload start.
inline constexpr char kWeightMagic[4] = {'D', 'W', 'S', 'N'};
inline constexpr std::uint32_t kWeightVersion = 1;

struct WeightRecord {
  std::string name;
  std::string dtype;
  Tensor::Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

std::vector<std::uint8_t> serialize_weights(const ModelGraph& model);

/// Rebuilds the graph for `config` and fills every tensor from `bytes`.
/// Throws WeightFormatError, WeightShapeError, TruncatedPayloadError or
/// MissingWeightError.
ModelGraph deserialize_weights(std::span<const std::uint8_t> bytes, const ModelConfig& config);

/// Header records only; validates magic, version and header bounds.
std::vector<WeightRecord> read_weight_records(std::span<const std::uint8_t> bytes);

void save_weights(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_weights(const std::filesystem::path& path, const ModelConfig& config);

/// Recovers width multiplier, block count and class count from tensor shapes.
/// Input size and dropout rate are not stored and come from `base`.
ModelConfig infer_config(std::span<const std::uint8_t> bytes, ModelConfig base = {});

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dermnet
