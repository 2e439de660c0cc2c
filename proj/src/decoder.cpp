#include "diffattn/decoder.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <numeric>
#include <string>

#include "diffattn/error.hpp"

namespace diffattn {
namespace {

namespace F = torch::nn::functional;

torch::Tensor resize_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

int group_count(int groups, int channels) { return std::gcd(groups, channels); }

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::array<std::int64_t, 2> scale_size(int scale, std::int64_t height, std::int64_t width) {
  return {height >> scale, width >> scale};
}

int ConditionBuilderImpl::input_channels(int scale, int base_channels) {
  int total = 0;
  for (int i = scale; i < kNumLevels; ++i) total += base_channels << i;
  return total;
}

ConditionBuilderImpl::ConditionBuilderImpl(int scale, int base_channels, int cond_channels) : scale_(scale) {
  if (scale < 0 || scale >= kNumScales) throw Error(ErrorKind::Config, "scale must lie in [0, 3]");
  f = register_module("f", conv(input_channels(scale, base_channels), cond_channels, 3));
  if (scale < kNumScales - 1) g = register_module("g", conv(1, cond_channels, 1));
}

VisualCondition ConditionBuilderImpl::forward(const FusedPyramid& fused, const std::optional<torch::Tensor>& coarser,
                                              std::int64_t height, std::int64_t width) {
  const auto [h, w] = scale_size(scale_, height, width);
  std::vector<torch::Tensor> parts;
  for (int i = scale_; i < kNumLevels; ++i) {
    const auto& level = fused.out[static_cast<std::size_t>(i)];
    const auto stride = std::int64_t{1} << (i + 2);
    if (!level.defined() || level.size(2) * stride != height || level.size(3) * stride != width) {
      throw Error(ErrorKind::Contract, "fused level " + std::to_string(i) + " does not match input " +
                                           std::to_string(height) + "x" + std::to_string(width));
    }
    parts.push_back(resize_to(level, h, w));
  }
  auto c = torch::elu(f(torch::cat(parts, 1)));
  if (scale_ < kNumScales - 1) {
    if (!coarser.has_value() || !coarser->defined()) {
      throw Error(ErrorKind::Dependency, "condition at scale " + std::to_string(scale_) +
                                             " needs the saliency map of scale " + std::to_string(scale_ + 1));
    }
    const auto& prev = *coarser;
    if (prev.dim() != 4 || prev.size(1) != 1 || prev.size(2) * 2 != h || prev.size(3) * 2 != w) {
      throw Error(ErrorKind::Contract, "coarser saliency map at scale " + std::to_string(scale_ + 1) +
                                           " has the wrong shape");
    }
    c = c + resize_to(g(prev), h, w);
  } else if (coarser.has_value() && coarser->defined()) {
    throw Error(ErrorKind::Dependency, "the coarsest scale takes no saliency input");
  }
  return VisualCondition{scale_, c};
}

ResBlockImpl::ResBlockImpl(int in_ch, int out_ch, int groups) {
  norm1 = register_module("norm1", torch::nn::GroupNorm(group_count(groups, in_ch), in_ch));
  conv1 = register_module("conv1", conv(in_ch, out_ch, 3));
  norm2 = register_module("norm2", torch::nn::GroupNorm(group_count(groups, out_ch), out_ch));
  conv2 = register_module("conv2", conv(out_ch, out_ch, 3));
  if (in_ch != out_ch) skip = register_module("skip", conv(in_ch, out_ch, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1(torch::silu(norm1(x)));
  h = conv2(torch::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

NoisePredictorImpl::NoisePredictorImpl(int cond_channels, UNetConfig cfg) : cfg_(cfg) {
  const int w = cfg.width;
  noisy_in = register_module("noisy_in", conv(1, w, 3));
  cond_in = register_module("cond_in", conv(cond_channels, w, 1));
  time1 = register_module("time1", torch::nn::Linear(cfg.time_dim, w));
  time2 = register_module("time2", torch::nn::Linear(w, w));
  enc0 = register_module("enc0", ResBlock(w, w, cfg.groups));
  down1 = register_module("down1", conv(w, 2 * w, 3, 2));
  enc1 = register_module("enc1", ResBlock(2 * w, 2 * w, cfg.groups));
  down2 = register_module("down2", conv(2 * w, 4 * w, 3, 2));
  enc2 = register_module("enc2", ResBlock(4 * w, 4 * w, cfg.groups));
  mid = register_module("mid", ResBlock(4 * w, 4 * w, cfg.groups));
  dec1 = register_module("dec1", ResBlock(6 * w, 2 * w, cfg.groups));
  dec0 = register_module("dec0", ResBlock(3 * w, w, cfg.groups));
  out_norm = register_module("out_norm", torch::nn::GroupNorm(group_count(cfg.groups, w), w));
  out = register_module("out", conv(w, 1, 3));
}

torch::Tensor NoisePredictorImpl::forward(const torch::Tensor& noisy, const torch::Tensor& taus,
                                          const torch::Tensor& cond) {
  if (noisy.dim() != 4 || noisy.size(1) != 1 || cond.dim() != 4 || noisy.size(0) != cond.size(0) ||
      noisy.size(2) != cond.size(2) || noisy.size(3) != cond.size(3)) {
    throw Error(ErrorKind::Shape, "noise predictor: noisy map and condition must share batch and spatial size");
  }
  if (noisy.size(2) % 4 != 0 || noisy.size(3) % 4 != 0) {
    throw Error(ErrorKind::Shape, "noise predictor: spatial size must be divisible by 4");
  }
  auto temb = time_embedding(taus, cfg_.time_dim).to(noisy.options());
  temb = time2(torch::silu(time1(temb)));

  auto h = noisy_in(noisy) + cond_in(cond) + temb.unsqueeze(-1).unsqueeze(-1);
  auto e0 = enc0(h);
  auto e1 = enc1(down1(e0));
  auto e2 = enc2(down2(e1));
  auto m = mid(e2);
  auto d1 = dec1(torch::cat({resize_to(m, e1.size(2), e1.size(3)), e1}, 1));
  auto d0 = dec0(torch::cat({resize_to(d1, e0.size(2), e0.size(3)), e0}, 1));
  return out(torch::silu(out_norm(d0)));
}

torch::Tensor initial_latent(std::vector<std::int64_t> shape, std::uint64_t seed, torch::TensorOptions opts) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(shape, gen, opts.device(torch::kCPU)).to(opts.device());
}

torch::Tensor sample_latent(const EpsilonFn& eps, std::vector<std::int64_t> shape, torch::TensorOptions opts,
                            const NoiseSchedule& sched, const SamplingPlan& plan, std::uint64_t seed,
                            double eta, Trajectory* trajectory, std::optional<LatentRange> x0_range) {
  if (plan.steps.empty() || plan.total_steps != sched.total_steps) {
    throw Error(ErrorKind::Plan, "sampling plan does not match the schedule");
  }
  for (int t : plan.steps) {
    if (t < 0 || t >= sched.total_steps) throw Error(ErrorKind::Plan, "plan step outside schedule");
  }
  torch::NoGradGuard guard;
  auto x = initial_latent(shape, seed, opts);
  // Ancestral noise for eta > 0 comes from an independent stream.
  auto noise_gen = at::make_generator<at::CPUGeneratorImpl>(seed ^ 0x5851f42d4c957f2dULL);
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const int tau = plan.steps[i];
    if (trajectory != nullptr) trajectory->emplace_back(tau, x.clone());
    auto eps_hat = eps(x, tau);
    if (x0_range) {
      // Losses act through a saturating sigmoid, so clean estimates can drift far outside the
      // target range where the map is flat; re-noising such an estimate leaves the training
      // distribution.
      const double ab = sched.alpha_bar[static_cast<std::size_t>(tau)];
      const auto x0 = predict_x0(x, eps_hat, tau, sched).clamp(x0_range->lo, x0_range->hi);
      eps_hat = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    }
    if (i + 1 < plan.steps.size()) {
      torch::Tensor noise;
      if (eta > 0.0) noise = torch::randn(x.sizes(), noise_gen, x.options().device(torch::kCPU)).to(x.device());
      x = ddim_step(x, eps_hat, tau, plan.steps[i + 1], sched, eta, noise);
    } else {
      x = predict_x0(x, eps_hat, tau, sched);
    }
    if (!torch::isfinite(x).all().item<bool>()) {
      throw Error(ErrorKind::Numeric, "non-finite latent after sampling step " + std::to_string(i) +
                                          " (tau = " + std::to_string(tau) + ")");
    }
  }
  if (trajectory != nullptr) trajectory->emplace_back(-1, x.clone());
  return x;
}

torch::Tensor sample_scale(const VisualCondition& cond, NoisePredictor& net, const NoiseSchedule& sched,
                           const SamplingPlan& plan, std::uint64_t seed, double eta, Trajectory* trajectory) {
  const auto& c = cond.volume;
  EpsilonFn fn = [&](const torch::Tensor& x, int tau) {
    auto taus = torch::full({x.size(0)}, tau, torch::kLong);
    return net->forward(x, taus, c);
  };
  auto latent = sample_latent(fn, {c.size(0), 1, c.size(2), c.size(3)}, c.options(), sched, plan, seed, eta,
                              trajectory, LatentRange{});
  return from_logit_domain(latent);
}

torch::Tensor to_logit_domain(const torch::Tensor& saliency) {
  return torch::logit(saliency.clamp(kTargetClamp, 1.0 - kTargetClamp)) / kLogitScale + 1.0;
}

torch::Tensor from_logit_domain(const torch::Tensor& latent) { return torch::sigmoid((latent - 1.0) * kLogitScale); }

MultiScaleDecoderImpl::MultiScaleDecoderImpl(int base_channels, UNetConfig unet) {
  for (int s = 0; s < kNumScales; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    conds_[idx] = register_module("cond" + std::to_string(s), ConditionBuilder(s, base_channels, unet.width));
    nets_[idx] = register_module("eps" + std::to_string(s), NoisePredictor(unet.width, unet));
  }
}

ScaleOutputs MultiScaleDecoderImpl::decode_all(const FusedPyramid& fused, std::int64_t height, std::int64_t width,
                                               const NoiseSchedule& sched, const SamplingPlan& plan,
                                               const std::array<std::uint64_t, kNumScales>& seeds, double eta,
                                               std::array<Trajectory, kNumScales>* trajectories) {
  torch::NoGradGuard guard;
  ScaleOutputs outputs;
  std::optional<torch::Tensor> coarser;
  for (int s = kNumScales - 1; s >= 0; --s) {
    const auto idx = static_cast<std::size_t>(s);
    auto cond = conds_[idx]->forward(fused, coarser, height, width);
    auto map = sample_scale(cond, nets_[idx], sched, plan, seeds[idx], eta,
                            trajectories != nullptr ? &(*trajectories)[idx] : nullptr);
    outputs.maps[idx] = map;
    coarser = map;
  }
  return outputs;
}

std::array<std::uint64_t, kNumScales> scale_seeds(std::uint64_t seed) {
  std::array<std::uint64_t, kNumScales> out{};
  for (std::size_t s = 0; s < kNumScales; ++s) out[s] = splitmix64(seed * kNumScales + s);
  return out;
}

std::array<ScaleLatents, kNumScales> train_step_latents(const std::array<torch::Tensor, kNumScales>& gt,
                                                        const NoiseSchedule& sched, torch::Generator& gen) {
  std::array<ScaleLatents, kNumScales> out;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const auto& g = gt[s];
    if (!g.defined() || g.dim() != 4 || g.size(1) != 1) {
      throw Error(ErrorKind::Shape, "per-scale ground truth must be [B, 1, h, w]");
    }
    auto& lat = out[s];
    lat.target = to_logit_domain(g);
    lat.taus = torch::randint(0, sched.total_steps, {g.size(0)}, gen, torch::kLong);
    lat.eps = torch::randn(g.sizes(), gen, g.options());
    lat.noisy = q_sample(lat.target, lat.taus, lat.eps, sched);
  }
  return out;
}

torch::Tensor training_prediction(const ScaleLatents& lat, const torch::Tensor& eps_hat, const NoiseSchedule& sched) {
  return from_logit_domain(predict_x0(lat.noisy, eps_hat, lat.taus, sched));
}

}  // namespace diffattn
