#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace diffattn {

constexpr int kNumLevels = 4;

/// Four-level encoder output. Level i has base_channels * 2^i channels at stride 2^(i+2).
struct FeaturePyramid {
  std::array<torch::Tensor, kNumLevels> levels;
  int base_channels = 0;
};

enum class BackboneKind { Toy, PretrainedAdapter };

struct EncoderConfig {
  BackboneKind kind = BackboneKind::Toy;
  int base_channels = 16;
  int height = 64;
  int width = 64;
  /// TorchScript module for the pretrained adapter; ignored by the toy backbone.
  std::string checkpoint;
};

/// Expected [C, H, W] of level `level` for an input of height x width.
std::array<std::int64_t, 3> level_shape(int level, int base_channels, int height, int width);

/// Throws ErrorKind::Contract naming the first level whose shape is wrong.
void check_pyramid(const FeaturePyramid& pyr, int height, int width);

/// Patch-merge + convolutional mixing stage.
class MixingBlockImpl : public torch::nn::Module {
 public:
  explicit MixingBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d depthwise{nullptr};
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d expand{nullptr};
  torch::nn::Conv2d reduce{nullptr};
};
TORCH_MODULE(MixingBlock);

/// Small trainable hierarchical encoder with the same four-level contract as the
/// pretrained backbone: strided patch merging followed by a mixing block per stage.
class ToyBackboneImpl : public torch::nn::Module {
 public:
  explicit ToyBackboneImpl(int base_channels);
  std::array<torch::Tensor, kNumLevels> forward(const torch::Tensor& image);

 private:
  std::array<torch::nn::Conv2d, kNumLevels> merge_{nullptr, nullptr, nullptr, nullptr};
  std::array<MixingBlock, kNumLevels> mix_{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(ToyBackbone);

/// Wraps an opaque, frozen feature extractor (e.g. an exported Swin-B) and
/// normalizes its input with the backbone's per-channel statistics.
class PretrainedAdapter {
 public:
  using BackboneFn = std::function<std::vector<torch::Tensor>(const torch::Tensor&)>;

  PretrainedAdapter(BackboneFn fn, std::vector<torch::Tensor> frozen_parameters,
                    std::array<double, 3> mean = {0.485, 0.456, 0.406},
                    std::array<double, 3> std = {0.229, 0.224, 0.225});

  /// Loads a TorchScript module whose forward returns four tensors.
  static PretrainedAdapter from_torchscript(const std::string& path);

  std::array<torch::Tensor, kNumLevels> operator()(const torch::Tensor& image) const;
  const std::vector<torch::Tensor>& parameters() const { return params_; }

 private:
  BackboneFn fn_;
  std::vector<torch::Tensor> params_;
  torch::Tensor mean_;
  torch::Tensor std_;
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderConfig cfg);
  EncoderImpl(EncoderConfig cfg, PretrainedAdapter adapter);

  /// image: [B, 3, H, W] in [0, 1].
  FeaturePyramid forward(const torch::Tensor& image);

  const EncoderConfig& config() const { return cfg_; }
  /// Frozen adapter parameters (empty for the toy backbone).
  std::vector<torch::Tensor> frozen_parameters() const;

 private:
  EncoderConfig cfg_;
  ToyBackbone toy_{nullptr};
  std::optional<PretrainedAdapter> adapter_;
};
TORCH_MODULE(Encoder);

}  // namespace diffattn
