#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "diffattn/diffusion.hpp"
#include "diffattn/ffp.hpp"

namespace diffattn {

constexpr int kNumScales = 4;

/// Logit clamp applied to saliency targets before diffusion.
constexpr double kTargetClamp = 1e-4;
/// Largest clamped logit. Latents are logit / kLogitScale + 1, spanning [0, 2] with an empty
/// map at 0: the schedule keeps sqrt(alpha_bar) ~ 0.22 of the target at the last step, and a
/// nonzero background there would differ from the N(0, 1) start of the sampler.
inline const double kLogitScale = std::log((1.0 - kTargetClamp) / kTargetClamp);

/// Per-scale conditioning volume c^s, [B, D_cond, H/2^s, W/2^s].
struct VisualCondition {
  int scale = 0;
  torch::Tensor volume;
};

/// Builds c^s from the fused pyramid: upsample fused levels s..3 to scale s,
/// concatenate, f^s (3x3) + ELU, and for s < 3 add u(g^s(S^{s+1})) with g^s a 1x1 conv.
class ConditionBuilderImpl : public torch::nn::Module {
 public:
  ConditionBuilderImpl(int scale, int base_channels, int cond_channels);

  /// `coarser` is the [B, 1, H/2^(s+1), W/2^(s+1)] saliency map of scale s+1; required iff s < 3.
  VisualCondition forward(const FusedPyramid& fused, const std::optional<torch::Tensor>& coarser,
                          std::int64_t height, std::int64_t width);

  /// Channel count entering f^s.
  static int input_channels(int scale, int base_channels);

  int scale() const { return scale_; }
  torch::nn::Conv2d f{nullptr};
  torch::nn::Conv2d g{nullptr};

 private:
  int scale_;
};
TORCH_MODULE(ConditionBuilder);

struct UNetConfig {
  int width = 16;
  int time_dim = 128;
  int groups = 8;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_ch, int out_ch, int groups);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Per-scale noise predictor: U-Net with two down and two up stages. The noisy map,
/// the projected condition and the projected time embedding are summed at the input.
class NoisePredictorImpl : public torch::nn::Module {
 public:
  NoisePredictorImpl(int cond_channels, UNetConfig cfg);

  /// noisy [B, 1, h, w], taus [B] (int64), cond [B, D, h, w] -> eps_hat [B, 1, h, w].
  torch::Tensor forward(const torch::Tensor& noisy, const torch::Tensor& taus, const torch::Tensor& cond);

  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  torch::nn::Conv2d noisy_in{nullptr}, cond_in{nullptr};
  torch::nn::Linear time1{nullptr}, time2{nullptr};
  ResBlock enc0{nullptr}, enc1{nullptr}, enc2{nullptr}, mid{nullptr}, dec1{nullptr}, dec0{nullptr};
  torch::nn::Conv2d down1{nullptr}, down2{nullptr}, out{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
};
TORCH_MODULE(NoisePredictor);

/// eps_theta(x_tau, tau) with the condition already bound.
using EpsilonFn = std::function<torch::Tensor(const torch::Tensor& x, int tau)>;

/// Latent snapshots of one sampling chain: (tau, x_tau) in visiting order followed by
/// (-1, x0_hat) for the final clean estimate.
using Trajectory = std::vector<std::pair<int, torch::Tensor>>;

/// Seeded standard-normal initial latent.
torch::Tensor initial_latent(std::vector<std::int64_t> shape, std::uint64_t seed, torch::TensorOptions opts);

/// Closed interval holding every diffusion target, [to_logit_domain(0), to_logit_domain(1)].
struct LatentRange {
  double lo = 0.0;
  double hi = 2.0;
};

/// Deterministic DDIM chain over `plan` from a seeded Gaussian latent; returns the final
/// clean estimate in the scaled logit domain (no sigmoid). With `x0_range`, each clean
/// estimate is clipped to it and the noise estimate recomputed to match before the update.
torch::Tensor sample_latent(const EpsilonFn& eps, std::vector<std::int64_t> shape, torch::TensorOptions opts,
                            const NoiseSchedule& sched, const SamplingPlan& plan, std::uint64_t seed,
                            double eta = 0.0, Trajectory* trajectory = nullptr,
                            std::optional<LatentRange> x0_range = std::nullopt);

/// sample_latent clipped to LatentRange{}, followed by from_logit_domain: saliency in [0, 1].
torch::Tensor sample_scale(const VisualCondition& cond, NoisePredictor& net, const NoiseSchedule& sched,
                           const SamplingPlan& plan, std::uint64_t seed, double eta = 0.0,
                           Trajectory* trajectory = nullptr);

/// Maps [0, 1] saliency to the clamped, scaled logit domain used for diffusion.
torch::Tensor to_logit_domain(const torch::Tensor& saliency);
/// Inverse of to_logit_domain: sigmoid(kLogitScale * (latent - 1)).
torch::Tensor from_logit_domain(const torch::Tensor& latent);

/// Maps (B, H, W) to the per-scale sizes (H/2^s, W/2^s).
std::array<std::int64_t, 2> scale_size(int scale, std::int64_t height, std::int64_t width);

struct ScaleOutputs {
  /// maps[s]: [B, 1, H/2^s, W/2^s] in (0, 1).
  std::array<torch::Tensor, kNumScales> maps;
  /// Evaluation output, Ŝ^0.
  const torch::Tensor& finest() const { return maps[0]; }
};

class MultiScaleDecoderImpl : public torch::nn::Module {
 public:
  MultiScaleDecoderImpl(int base_channels, UNetConfig unet);

  ConditionBuilder condition(int s) const { return conds_[static_cast<std::size_t>(s)]; }
  NoisePredictor predictor(int s) const { return nets_[static_cast<std::size_t>(s)]; }

  /// Coarse-to-fine sampling s = 3 -> 0; seeds[s] drives the initial latent of scale s.
  ScaleOutputs decode_all(const FusedPyramid& fused, std::int64_t height, std::int64_t width,
                          const NoiseSchedule& sched, const SamplingPlan& plan,
                          const std::array<std::uint64_t, kNumScales>& seeds, double eta = 0.0,
                          std::array<Trajectory, kNumScales>* trajectories = nullptr);

 private:
  std::array<ConditionBuilder, kNumScales> conds_{nullptr, nullptr, nullptr, nullptr};
  std::array<NoisePredictor, kNumScales> nets_{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(MultiScaleDecoder);

/// Per-scale seeds derived from one base seed.
std::array<std::uint64_t, kNumScales> scale_seeds(std::uint64_t seed);

/// Training-time diffusion latents of one scale.
struct ScaleLatents {
  torch::Tensor target;  // clamped-logit GT, [B, 1, h, w]
  torch::Tensor taus;    // [B] int64, uniform over [0, T_i)
  torch::Tensor eps;     // [B, 1, h, w]
  torch::Tensor noisy;   // q_sample(target, taus, eps)
};

/// Draws (tau, eps) per scale and forms the noisy latents from per-scale GT maps in [0, 1].
std::array<ScaleLatents, kNumScales> train_step_latents(const std::array<torch::Tensor, kNumScales>& gt,
                                                        const NoiseSchedule& sched, torch::Generator& gen);

/// One-step clean estimate used as the training-time prediction: from_logit_domain(x0_hat).
torch::Tensor training_prediction(const ScaleLatents& lat, const torch::Tensor& eps_hat, const NoiseSchedule& sched);

}  // namespace diffattn
