#pragma once

#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace diffattn {

constexpr double kLossEps = 1e-7;

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 0.001;
};

/// lambda1 = 1, lambda3 = 0.001, lambda2 per dataset:
/// traffic-gaze 1, dada-2000 0.2, bdd-a 0.1, drfixd-rainy 1.
LossWeights dataset_preset(std::string_view dataset);

/// Throws ErrorKind::Config unless every weight is >= 0 and at least one is > 0.
void validate(const LossWeights& w);

/// Mean binary cross-entropy with soft targets; pred clamped to [eps, 1 - eps].
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& gt);

/// KL(gt || pred) per sample over sum-normalized maps, averaged over the batch:
/// sum g * log(g / (p + eps) + eps). Maps are [B, ...] or a single [H, W] map.
torch::Tensor kld_loss(const torch::Tensor& pred, const torch::Tensor& gt);

/// Mean squared error between injected and predicted noise.
torch::Tensor dd_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat);

struct ScaleLoss {
  torch::Tensor bce;
  torch::Tensor kld;
  torch::Tensor dd;
};

/// (1/|S|) sum_s [lambda1 BCE^s + lambda2 KLD^s + lambda3 DD^s]; requires exactly
/// `expected_scales` entries.
torch::Tensor total_loss(const std::vector<ScaleLoss>& terms, const LossWeights& w, std::size_t expected_scales);

/// Bilinear upsampling of a per-scale prediction to the input resolution.
torch::Tensor upsample_to(const torch::Tensor& pred, std::int64_t height, std::int64_t width);

}  // namespace diffattn
