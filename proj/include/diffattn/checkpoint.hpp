#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "diffattn/config.hpp"

namespace diffattn {

constexpr std::int64_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::int64_t version = 0;
  std::int64_t step = 0;
  /// Resolved config of the run that wrote the checkpoint, INI text.
  std::string config;
  bool has_optimizer = false;
};

/// Writes every parameter and buffer of `model` under its module path, plus the
/// optional optimizer state, step counter, config snapshot and format version.
/// Refuses (ErrorKind::Numeric) to write non-finite parameters.
void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& model,
                     torch::optim::Optimizer* optimizer, std::int64_t step, const ExperimentConfig& cfg);

/// Header fields only.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Restores parameters (and optimizer state when given and present). Throws
/// ErrorKind::Version on a format mismatch, an architecture mismatch with `cfg`,
/// or a missing/mis-shaped tensor.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, torch::nn::Module& model,
                               torch::optim::Optimizer* optimizer, const ExperimentConfig& cfg);

}  // namespace diffattn
