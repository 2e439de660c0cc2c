#include "diffattn/encoder.hpp"

#include <torch/script.h>

#include <sstream>

#include "diffattn/error.hpp"

namespace diffattn {

std::array<std::int64_t, 3> level_shape(int level, int base_channels, int height, int width) {
  const int stride = 1 << (level + 2);
  return {static_cast<std::int64_t>(base_channels) << level, height / stride, width / stride};
}

void check_pyramid(const FeaturePyramid& pyr, int height, int width) {
  for (int i = 0; i < kNumLevels; ++i) {
    const auto expected = level_shape(i, pyr.base_channels, height, width);
    const auto& t = pyr.levels[static_cast<std::size_t>(i)];
    const bool ok = t.defined() && t.dim() == 4 && t.size(1) == expected[0] &&
                    t.size(2) == expected[1] && t.size(3) == expected[2];
    if (!ok) {
      std::ostringstream msg;
      msg << "pyramid level " << i << " expected [B, " << expected[0] << ", " << expected[1]
          << ", " << expected[2] << "], got ";
      if (t.defined()) msg << t.sizes();
      else msg << "undefined";
      throw Error(ErrorKind::Contract, msg.str());
    }
  }
}

MixingBlockImpl::MixingBlockImpl(int channels) {
  depthwise = register_module(
      "depthwise",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1).groups(channels)));
  norm = register_module("norm", torch::nn::GroupNorm(1, channels));
  expand = register_module("expand", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 2 * channels, 1)));
  reduce = register_module("reduce", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * channels, channels, 1)));
}

torch::Tensor MixingBlockImpl::forward(const torch::Tensor& x) {
  auto y = norm(depthwise(x));
  y = reduce(torch::gelu(expand(y)));
  return x + y;
}

ToyBackboneImpl::ToyBackboneImpl(int base_channels) {
  int in_ch = 3;
  for (int i = 0; i < kNumLevels; ++i) {
    const int out_ch = base_channels << i;
    const int k = i == 0 ? 4 : 2;
    merge_[static_cast<std::size_t>(i)] = register_module(
        "merge" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, k).stride(k)));
    mix_[static_cast<std::size_t>(i)] = register_module("mix" + std::to_string(i), MixingBlock(out_ch));
    in_ch = out_ch;
  }
}

std::array<torch::Tensor, kNumLevels> ToyBackboneImpl::forward(const torch::Tensor& image) {
  std::array<torch::Tensor, kNumLevels> out;
  auto x = image;
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    x = mix_[i](merge_[i](x));
    out[i] = x;
  }
  return out;
}

PretrainedAdapter::PretrainedAdapter(BackboneFn fn, std::vector<torch::Tensor> frozen_parameters,
                                     std::array<double, 3> mean, std::array<double, 3> std)
    : fn_(std::move(fn)), params_(std::move(frozen_parameters)) {
  for (auto& p : params_) p.set_requires_grad(false);
  mean_ = torch::tensor({mean[0], mean[1], mean[2]}, torch::kFloat64).view({1, 3, 1, 1});
  std_ = torch::tensor({std[0], std[1], std[2]}, torch::kFloat64).view({1, 3, 1, 1});
}

PretrainedAdapter PretrainedAdapter::from_torchscript(const std::string& path) {
  torch::jit::Module module;
  try {
    module = torch::jit::load(path);
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::Io, "cannot load backbone checkpoint '" + path + "': " + e.what_without_backtrace());
  }
  module.eval();
  std::vector<torch::Tensor> params;
  for (const auto& p : module.parameters()) params.push_back(p);
  auto fn = [module](const torch::Tensor& x) mutable {
    torch::NoGradGuard guard;
    auto out = module.forward({x});
    std::vector<torch::Tensor> levels;
    if (out.isTuple()) {
      for (const auto& v : out.toTupleRef().elements()) levels.push_back(v.toTensor());
    } else if (out.isList()) {
      for (const auto& v : out.toList()) levels.push_back(v.get().toTensor());
    } else {
      throw Error(ErrorKind::Contract, "backbone must return a tuple or list of four tensors");
    }
    return levels;
  };
  return PretrainedAdapter(std::move(fn), std::move(params));
}

std::array<torch::Tensor, kNumLevels> PretrainedAdapter::operator()(const torch::Tensor& image) const {
  auto x = (image - mean_.to(image.options())) / std_.to(image.options());
  auto levels = fn_(x);
  if (levels.size() != kNumLevels) {
    throw Error(ErrorKind::Contract, "backbone returned " + std::to_string(levels.size()) +
                                         " levels, expected 4");
  }
  return {levels[0], levels[1], levels[2], levels[3]};
}

EncoderImpl::EncoderImpl(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.kind == BackboneKind::PretrainedAdapter) {
    adapter_.emplace(PretrainedAdapter::from_torchscript(cfg_.checkpoint));
  } else {
    toy_ = register_module("toy", ToyBackbone(cfg_.base_channels));
  }
}

EncoderImpl::EncoderImpl(EncoderConfig cfg, PretrainedAdapter adapter)
    : cfg_(std::move(cfg)), adapter_(std::move(adapter)) {
  cfg_.kind = BackboneKind::PretrainedAdapter;
}

FeaturePyramid EncoderImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw Error(ErrorKind::Shape, "encoder expects [B, 3, H, W] input");
  }
  const auto h = image.size(2);
  const auto w = image.size(3);
  if (h % 32 != 0 || w % 32 != 0) {
    throw Error(ErrorKind::Shape, "input " + std::to_string(h) + "x" + std::to_string(w) +
                                      " not divisible by 32");
  }
  FeaturePyramid pyr;
  pyr.base_channels = cfg_.base_channels;
  pyr.levels = adapter_ ? (*adapter_)(image) : toy_->forward(image);
  check_pyramid(pyr, static_cast<int>(h), static_cast<int>(w));
  return pyr;
}

std::vector<torch::Tensor> EncoderImpl::frozen_parameters() const {
  return adapter_ ? adapter_->parameters() : std::vector<torch::Tensor>{};
}

}  // namespace diffattn
