#pragma once

#include "ldam/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace ldam {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (all integers little-endian):
///   "LDAMCKPT"  u32 version  u64 n  <n bytes of JSON metadata>
///   u32 tensor count, then per tensor: u32 name length, name, u32 ndim, ndim x u64 dims, f64 data
///   u64 FNV-1a of every preceding byte
/// Metadata holds the model config, task schema, embedding descriptor and, when
/// present, the training progress (epochs, seed, optimizer scalars, log). Optimizer
/// moments are stored as tensors named "adam.m.<param>" / "adam.v.<param>".
struct TrainingProgress {
  int epochs_completed = 0;
  std::uint64_t seed = 0;
  AdamState adam;  // moments follow ModelParams::named() order
  TrainLog log;
};

struct Checkpoint {
  ModelConfig config;
  TaskSchema schema;
  std::string embeddings;  // EmbeddingProvider descriptor
  ModelParams params;
  std::optional<TrainingProgress> training;
};

Checkpoint make_checkpoint(const ModelConfig& config, const TaskSchema& schema, const std::string& embeddings,
                           const TrainState& state, std::uint64_t seed);
/// Training state to continue from; throws if the checkpoint carries no training progress.
TrainState resume_state(const Checkpoint& checkpoint);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace ldam
