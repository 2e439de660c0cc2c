#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "diffattn/checkpoint.hpp"
#include "diffattn/config.hpp"
#include "diffattn/datakit.hpp"
#include "diffattn/metrics.hpp"
#include "diffattn/model.hpp"

namespace diffattn {

/// Loads a split of cfg.data.root at the model resolution. cfg.data.sigma > 0 overrides the manifest.
std::vector<Sample> load_split(const ExperimentConfig& cfg, const std::string& split, Diagnostics* diag = nullptr);

struct StepStats {
  std::int64_t step = 0;  // 1-based index of the step just taken
  double loss = 0.0;
  double bce = 0.0;
  double kld = 0.0;
  double dd = 0.0;
};

/// Single-process training state. Batch order, augmentation and diffusion noise of
/// step k depend only on (seed, k), so resuming from a checkpoint replays exactly.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::vector<Sample> train, torch::Device device = torch::kCPU);

  /// One optimizer step; throws ErrorKind::Numeric on a non-finite loss.
  StepStats step();
  std::int64_t steps_done() const { return step_; }

  void save(const std::filesystem::path& path) const;
  void resume(const std::filesystem::path& path);

  DiffAttnModel& model() { return model_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const ExperimentConfig& config() const { return cfg_; }
  torch::optim::Optimizer& optimizer() { return *optim_; }

 private:
  struct Batch {
    torch::Tensor images;
    std::array<torch::Tensor, kNumScales> gt;
  };
  Batch make_batch(std::int64_t step) const;
  TrainForward forward(std::int64_t step);

  ExperimentConfig cfg_;
  std::vector<Sample> train_;
  torch::Device device_;
  DiffAttnModel model_{nullptr};
  NoiseSchedule sched_;
  std::unique_ptr<torch::optim::Optimizer> optim_;
  std::int64_t step_ = 0;
};

/// Ŝ^0 for one image.
Grid predict_map(DiffAttnModel& model, const NoiseSchedule& sched, const SamplingPlan& plan, const Image& image,
                 std::uint64_t seed, double eta = 0.0);

/// Predicts every sample with `plan` and scores it against its GT and fixations.
EvalReport evaluate_model(DiffAttnModel& model, const NoiseSchedule& sched, const SamplingPlan& plan,
                          const std::vector<Sample>& samples, std::uint64_t seed, double eta = 0.0,
                          Diagnostics* diag = nullptr);

struct TrainRunResult {
  std::int64_t steps = 0;
  std::filesystem::path last_checkpoint;
  bool early_stopped = false;
  double final_loss = 0.0;
};

/// Full training run into cfg.out_dir: archives the config, appends to loss.csv,
/// checkpoints every optim.checkpoint_every steps and at the end, and stops early when
/// validation KLD has not improved for optim.patience evaluations.
TrainRunResult run_training(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& resume,
                            Diagnostics* diag = nullptr, torch::Device device = torch::kCPU);

}  // namespace diffattn
