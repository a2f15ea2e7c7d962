#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "stemlm/model.hpp"

namespace stemlm {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct OptimizerState {
  double learning_rate = 0.0;
  std::uint64_t steps = 0;
  std::vector<num::Tensor> first_moments;
  std::vector<num::Tensor> second_moments;
};

struct Checkpoint {
  std::unique_ptr<LanguageModel> model;
  OptimizerState optimizer;
  std::size_t epoch = 0;
};

/// Layout (all integers little-endian):
///   "STEMLMCK" | u32 version | u64 header_len | JSON header
///   | u32 block_count | blocks | u64 FNV-1a of everything before it
/// A block is u32 name_len | name | u64 rows | u64 cols | rows*cols f64.
/// The header carries the model config, the vocabulary, the epoch and the
/// optimizer scalars.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stemlm
