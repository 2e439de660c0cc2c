#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "diffattn/config.hpp"
#include "diffattn/datakit.hpp"
#include "diffattn/decoder.hpp"
#include "diffattn/encoder.hpp"
#include "diffattn/ffp.hpp"
#include "diffattn/llm_enhance.hpp"
#include "diffattn/objectives.hpp"

namespace diffattn {

/// Result of one training forward pass.
struct TrainForward {
  torch::Tensor loss;
  std::vector<ScaleLoss> terms;
  /// Training-time Ŝ^s (sigmoid of the one-step clean estimate), native resolution.
  std::array<torch::Tensor, kNumScales> predictions;
  std::array<ScaleLatents, kNumScales> latents;
};

/// Encoder -> optional semantic enhancement of level 3 -> FFP -> multi-scale diffusion decoder.
class DiffAttnModelImpl : public torch::nn::Module {
 public:
  DiffAttnModelImpl(const ModelConfig& cfg, int height, int width);

  /// images: [B, 3, H, W] in [0, 1].
  FusedPyramid fuse(const torch::Tensor& images);

  /// gt[s]: [B, 1, H/2^s, W/2^s] in [0, 1]; gt[0] is also the full-resolution BCE/KLD target.
  TrainForward forward_train(const torch::Tensor& images, const std::array<torch::Tensor, kNumScales>& gt,
                             const NoiseSchedule& sched, torch::Generator& gen, const LossWeights& weights);

  ScaleOutputs infer(const torch::Tensor& images, const NoiseSchedule& sched, const SamplingPlan& plan,
                     std::uint64_t seed, double eta = 0.0,
                     std::array<Trajectory, kNumScales>* trajectories = nullptr);

  /// Parameters with requires_grad set, in registration order.
  std::vector<torch::Tensor> trainable_parameters() const;

  const ModelConfig& config() const { return cfg_; }
  int height() const { return height_; }
  int width() const { return width_; }

  Encoder encoder{nullptr};
  SemanticEnhancer enhancer{nullptr};
  FeatureFusionPyramid ffp{nullptr};
  MultiScaleDecoder decoder{nullptr};

 private:
  ModelConfig cfg_;
  int height_;
  int width_;
};
TORCH_MODULE(DiffAttnModel);

DiffAttnModel make_model(const ExperimentConfig& cfg);

/// [3, H, W] float32 in [0, 1].
torch::Tensor image_to_tensor(const Image& img);
/// [1, H, W] float32 copy of a grid.
torch::Tensor grid_to_tensor(const Grid& g);
/// Accepts [H, W], [1, H, W] or [1, 1, H, W].
Grid tensor_to_grid(const torch::Tensor& t);

/// Per-scale targets for one sample: full-resolution GT and its 2^s area-pooled versions.
std::array<Grid, kNumScales> scale_targets(const Grid& gt, Diagnostics* diag = nullptr);

/// Compute device from DIFFATTN_DEVICE ("cpu" default, "cuda" when available).
torch::Device device_from_env();

}  // namespace diffattn
