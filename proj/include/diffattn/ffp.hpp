#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "diffattn/encoder.hpp"

namespace diffattn {

/// Per-level fused outputs {X^{0,3}, X^{1,2}, X^{2,1}, X^{3,0}}; out[i] keeps level i's shape.
struct FusedPyramid {
  std::array<torch::Tensor, kNumLevels> out;
  int base_channels = 0;
};

/// Channel-attention reduction used for a given base width (4 for toy widths, 16 otherwise).
int default_reduction(int base_channels);

/// Squeeze-excitation gating: global average pool -> bottleneck MLP -> sigmoid -> scale.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  ChannelAttentionImpl(int channels, int reduction);
  torch::Tensor forward(const torch::Tensor& x);
  /// Per-channel gates in (0, 1), shape [B, C].
  torch::Tensor gates(const torch::Tensor& x);

  torch::nn::Linear squeeze{nullptr};
  torch::nn::Linear excite{nullptr};
};
TORCH_MODULE(ChannelAttention);

/// Cross-layer attention cell: CA over [lower, up(ELU(kappa(higher)))] followed by a
/// 1x1 projection back to the lower level's width.
class CrossLayerAttentionImpl : public torch::nn::Module {
 public:
  CrossLayerAttentionImpl(int lower_channels, int reduction);
  torch::Tensor forward(const torch::Tensor& lower, const torch::Tensor& higher);

  torch::nn::Conv2d kappa{nullptr};
  ChannelAttention attention{nullptr};
  torch::nn::Conv2d project{nullptr};

 private:
  int channels_;
};
TORCH_MODULE(CrossLayerAttention);

/// Triangular dense grid of CLA cells over the four encoder levels.
class FeatureFusionPyramidImpl : public torch::nn::Module {
 public:
  FeatureFusionPyramidImpl(int base_channels, int reduction);

  FusedPyramid forward(const FeaturePyramid& pyr);

  /// Cell producing X^{level, column+1}; valid for level + column <= 2.
  CrossLayerAttention cell(int level, int column) const;
  int cell_count() const { return static_cast<int>(cells_.size()); }
  ChannelAttention initial(int level) const { return initial_[static_cast<std::size_t>(level)]; }

 private:
  int base_channels_;
  std::array<ChannelAttention, kNumLevels> initial_{nullptr, nullptr, nullptr, nullptr};
  std::vector<CrossLayerAttention> cells_;
  std::vector<std::array<int, 2>> cell_index_;
};
TORCH_MODULE(FeatureFusionPyramid);

/// Closed-form parameter count of the FFP (used to cross-check the module).
std::int64_t ffp_parameter_count(int base_channels, int reduction);

}  // namespace diffattn
