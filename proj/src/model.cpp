#include "diffattn/model.hpp"

#include <cstdlib>
#include <string>

#include "diffattn/error.hpp"
#include "diffattn/gt_saliency.hpp"

namespace diffattn {

DiffAttnModelImpl::DiffAttnModelImpl(const ModelConfig& cfg, int height, int width)
    : cfg_(cfg), height_(height), width_(width) {
  EncoderConfig ecfg{cfg.backbone, cfg.base_channels, height, width, cfg.backbone_checkpoint};
  encoder = register_module("encoder", Encoder(ecfg));
  if (cfg.enhance) {
    auto layer = make_sequence_layer(cfg.provenance, cfg.llm, cfg.llm_checkpoint);
    enhancer = register_module("enhancer", SemanticEnhancer(cfg.base_channels * 8, layer->width(), layer));
  }
  ffp = register_module("ffp", FeatureFusionPyramid(cfg.base_channels, cfg.effective_reduction()));
  decoder = register_module("decoder", MultiScaleDecoder(cfg.base_channels, cfg.unet));
}

FusedPyramid DiffAttnModelImpl::fuse(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(2) != height_ || images.size(3) != width_) {
    throw Error(ErrorKind::Shape, "model expects [B, 3, " + std::to_string(height_) + ", " +
                                      std::to_string(width_) + "] images");
  }
  auto pyr = encoder->forward(images);
  if (enhancer) pyr.levels[3] = enhancer->forward(pyr.levels[3]);
  return ffp->forward(pyr);
}

TrainForward DiffAttnModelImpl::forward_train(const torch::Tensor& images,
                                              const std::array<torch::Tensor, kNumScales>& gt,
                                              const NoiseSchedule& sched, torch::Generator& gen,
                                              const LossWeights& weights) {
  const auto fused = fuse(images);
  for (int s = 0; s < kNumScales; ++s) {
    const auto [h, w] = scale_size(s, height_, width_);
    const auto& g = gt[static_cast<std::size_t>(s)];
    if (!g.defined() || g.dim() != 4 || g.size(0) != images.size(0) || g.size(2) != h || g.size(3) != w) {
      throw Error(ErrorKind::Shape, "ground truth for scale " + std::to_string(s) + " must be [B, 1, " +
                                        std::to_string(h) + ", " + std::to_string(w) + "]");
    }
  }

  TrainForward out;
  out.latents = train_step_latents(gt, sched, gen);
  const auto& full_gt = gt[0];
  std::optional<torch::Tensor> coarser;
  out.terms.resize(kNumScales);
  for (int s = kNumScales - 1; s >= 0; --s) {
    const auto idx = static_cast<std::size_t>(s);
    const auto& lat = out.latents[idx];
    auto cond = decoder->condition(s)->forward(fused, coarser, height_, width_);
    auto eps_hat = decoder->predictor(s)->forward(lat.noisy, lat.taus.to(lat.noisy.device()), cond.volume);
    auto pred = training_prediction(lat, eps_hat, sched);
    out.predictions[idx] = pred;
    auto up = upsample_to(pred, height_, width_);
    out.terms[idx] = ScaleLoss{bce_loss(up, full_gt), kld_loss(up, full_gt), dd_loss(lat.eps, eps_hat)};
    coarser = pred;
  }
  out.loss = total_loss(out.terms, weights, kNumScales);
  return out;
}

ScaleOutputs DiffAttnModelImpl::infer(const torch::Tensor& images, const NoiseSchedule& sched,
                                      const SamplingPlan& plan, std::uint64_t seed, double eta,
                                      std::array<Trajectory, kNumScales>* trajectories) {
  torch::NoGradGuard guard;
  const auto fused = fuse(images);
  return decoder->decode_all(fused, height_, width_, sched, plan, scale_seeds(seed), eta, trajectories);
}

std::vector<torch::Tensor> DiffAttnModelImpl::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

DiffAttnModel make_model(const ExperimentConfig& cfg) {
  return DiffAttnModel(cfg.model, cfg.data.height, cfg.data.width);
}

torch::Tensor image_to_tensor(const Image& img) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(img.rgb.data()), {img.height, img.width, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

torch::Tensor grid_to_tensor(const Grid& g) {
  auto vals = g.values();
  return torch::from_blob(const_cast<double*>(vals.data()), {1, g.height(), g.width()}, torch::kFloat64)
      .to(torch::kFloat32);
}

Grid tensor_to_grid(const torch::Tensor& t) {
  auto x = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  while (x.dim() > 2 && x.size(0) == 1) x = x.squeeze(0);
  if (x.dim() != 2) throw Error(ErrorKind::Shape, "expected a single-channel map");
  const auto h = static_cast<int>(x.size(0));
  const auto w = static_cast<int>(x.size(1));
  const double* p = x.data_ptr<double>();
  return Grid(h, w, std::vector<double>(p, p + x.numel()));
}

std::array<Grid, kNumScales> scale_targets(const Grid& gt, Diagnostics* diag) {
  std::array<Grid, kNumScales> out;
  out[0] = gt;
  const SaliencyMap full{gt, true};
  for (int s = 1; s < kNumScales; ++s) out[static_cast<std::size_t>(s)] = downsample_gt(full, 1 << s, diag).grid;
  return out;
}

torch::Device device_from_env() {
  const char* env = std::getenv("DIFFATTN_DEVICE");
  const std::string name = env == nullptr ? "cpu" : env;
  if (name.empty() || name == "cpu") return torch::kCPU;
  if (name == "cuda") {
    if (!torch::cuda::is_available()) throw Error(ErrorKind::Config, "DIFFATTN_DEVICE=cuda but no CUDA device is available");
    return torch::kCUDA;
  }
  throw Error(ErrorKind::Config, "DIFFATTN_DEVICE must be cpu or cuda, got '" + name + "'");
}

}  // namespace diffattn
