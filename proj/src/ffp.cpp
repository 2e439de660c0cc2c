#include "diffattn/ffp.hpp"

#include <string>

#include "diffattn/error.hpp"

namespace diffattn {

int default_reduction(int base_channels) { return base_channels < 64 ? 4 : 16; }

ChannelAttentionImpl::ChannelAttentionImpl(int channels, int reduction) {
  if (reduction < 1 || channels < reduction) {
    throw Error(ErrorKind::Config, "channel attention needs channels (" + std::to_string(channels) +
                                       ") >= reduction (" + std::to_string(reduction) + ")");
  }
  const int hidden = channels / reduction;
  squeeze = register_module("squeeze", torch::nn::Linear(channels, hidden));
  excite = register_module("excite", torch::nn::Linear(hidden, channels));
}

torch::Tensor ChannelAttentionImpl::gates(const torch::Tensor& x) {
  auto pooled = x.mean({2, 3});
  return torch::sigmoid(excite(torch::relu(squeeze(pooled))));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
  auto g = gates(x);
  return x * g.unsqueeze(-1).unsqueeze(-1);
}

CrossLayerAttentionImpl::CrossLayerAttentionImpl(int lower_channels, int reduction)
    : channels_(lower_channels) {
  kappa = register_module(
      "kappa", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * lower_channels, lower_channels, 3).padding(1)));
  attention = register_module("attention", ChannelAttention(2 * lower_channels, reduction));
  project = register_module(
      "project", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * lower_channels, lower_channels, 1)));
}

torch::Tensor CrossLayerAttentionImpl::forward(const torch::Tensor& lower, const torch::Tensor& higher) {
  const bool ok = lower.dim() == 4 && higher.dim() == 4 && lower.size(0) == higher.size(0) &&
                  lower.size(1) == channels_ && higher.size(1) == 2 * channels_ &&
                  higher.size(2) * 2 == lower.size(2) && higher.size(3) * 2 == lower.size(3);
  if (!ok) {
    throw Error(ErrorKind::Contract,
                "CLA expects higher level with 2x channels and half the spatial size of lower");
  }
  auto up = torch::nn::functional::interpolate(
      torch::elu(kappa(higher)),
      torch::nn::functional::InterpolateFuncOptions()
          .size(std::vector<int64_t>{lower.size(2), lower.size(3)})
          .mode(torch::kNearest));
  return project(attention(torch::cat({lower, up}, 1)));
}

FeatureFusionPyramidImpl::FeatureFusionPyramidImpl(int base_channels, int reduction)
    : base_channels_(base_channels) {
  for (int i = 0; i < kNumLevels; ++i) {
    initial_[static_cast<std::size_t>(i)] = register_module(
        "ca" + std::to_string(i), ChannelAttention(base_channels << i, reduction));
  }
  for (int j = 0; j + 1 < kNumLevels; ++j) {
    for (int i = 0; i + j + 1 < kNumLevels; ++i) {
      cells_.push_back(register_module("cla" + std::to_string(i) + "_" + std::to_string(j),
                                       CrossLayerAttention(base_channels << i, reduction)));
      cell_index_.push_back({i, j});
    }
  }
}

CrossLayerAttention FeatureFusionPyramidImpl::cell(int level, int column) const {
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    if (cell_index_[k][0] == level && cell_index_[k][1] == column) return cells_[k];
  }
  throw Error(ErrorKind::Config, "no CLA cell at level " + std::to_string(level) + ", column " +
                                     std::to_string(column));
}

FusedPyramid FeatureFusionPyramidImpl::forward(const FeaturePyramid& pyr) {
  if (pyr.base_channels != base_channels_) {
    throw Error(ErrorKind::Contract, "pyramid base width " + std::to_string(pyr.base_channels) +
                                         " does not match FFP width " + std::to_string(base_channels_));
  }
  // grid[i][j] holds X^{i,j}.
  std::array<std::vector<torch::Tensor>, kNumLevels> grid;
  for (std::size_t i = 0; i < kNumLevels; ++i) grid[i].push_back(initial_[i](pyr.levels[i]));
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    const auto i = static_cast<std::size_t>(cell_index_[k][0]);
    const auto j = static_cast<std::size_t>(cell_index_[k][1]);
    grid[i].push_back(cells_[k](grid[i][j], grid[i + 1][j]));
  }
  FusedPyramid fused;
  fused.base_channels = base_channels_;
  for (std::size_t i = 0; i < kNumLevels; ++i) fused.out[i] = grid[i].back();
  return fused;
}

std::int64_t ffp_parameter_count(int base_channels, int reduction) {
  auto ca = [&](std::int64_t c) {
    const std::int64_t h = c / reduction;
    return c * h + h + h * c + c;
  };
  std::int64_t total = 0;
  for (int i = 0; i < kNumLevels; ++i) total += ca(static_cast<std::int64_t>(base_channels) << i);
  for (int j = 0; j + 1 < kNumLevels; ++j) {
    for (int i = 0; i + j + 1 < kNumLevels; ++i) {
      const std::int64_t c = static_cast<std::int64_t>(base_channels) << i;
      total += 2 * c * c * 9 + c;  // kappa
      total += ca(2 * c);
      total += 2 * c * c + c;  // project
    }
  }
  return total;
}

}  // namespace diffattn
