#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "diffattn/decoder.hpp"
#include "diffattn/encoder.hpp"
#include "diffattn/llm_enhance.hpp"
#include "diffattn/objectives.hpp"

namespace diffattn {

struct ModelConfig {
  BackboneKind backbone = BackboneKind::Toy;
  std::string backbone_checkpoint;
  int base_channels = 16;
  /// Channel-attention reduction; 0 picks default_reduction(base_channels).
  int reduction = 0;
  /// false removes the LLM enhancement (and its projections) entirely.
  bool enhance = true;
  Provenance provenance = Provenance::RandomFrozen;
  DecoderLayerConfig llm{64, 4, 2, 128, 500000.0, 1e-5};
  std::string llm_checkpoint;
  int llm_layer_index = 15;
  UNetConfig unet{16, 128, 8};

  int effective_reduction() const { return reduction > 0 ? reduction : default_reduction(base_channels); }
};

struct DiffusionConfig {
  int train_steps = 300;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sample_steps = 5;
  double eta = 0.0;
};

struct OptimConfig {
  std::string kind = "adamw";
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  int batch_size = 4;
  int max_steps = 2000;
  int checkpoint_every = 500;
  /// Validation interval for early stopping; 0 disables it.
  int eval_every = 0;
  int patience = 5;
};

struct DataConfig {
  std::string root;
  std::string split = "train";
  std::string val_split = "val";
  double sigma = 0.0;
  int height = 64;
  int width = 64;
  bool augment = true;
};

struct ExperimentConfig {
  ModelConfig model;
  DiffusionConfig diffusion;
  LossWeights loss;
  OptimConfig optim;
  DataConfig data;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  /// Full-scale settings: Swin-B width, 192x320 input, AdamW lr 1e-5, wd 1e-3, batch 18,
  /// T_i = 300, 2048-wide frozen decoder layer.
  static ExperimentConfig paper_defaults();
  /// Desk-scale profile: C_e = 16, U-Net width 16, 64x64, lr 1e-3, batch 4.
  static ExperimentConfig toy_defaults();

  /// Throws ErrorKind::Config on inconsistent settings; with check_paths also
  /// requires referenced files and directories to exist.
  void validate(bool check_paths) const;
};

std::string to_ini(const ExperimentConfig& cfg);
ExperimentConfig parse_ini(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Architecture-defining part of the config; two configs with equal signatures
/// produce checkpoint-compatible models.
std::string architecture_signature(const ExperimentConfig& cfg);

}  // namespace diffattn
