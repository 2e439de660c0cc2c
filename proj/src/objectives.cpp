#include "diffattn/objectives.hpp"

#include <string>

#include "diffattn/error.hpp"

namespace diffattn {
namespace {

void check_shapes(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw Error(ErrorKind::Shape, std::string(what) + ": prediction and target shapes differ");
  }
}

}  // namespace

LossWeights dataset_preset(std::string_view dataset) {
  LossWeights w;
  if (dataset == "traffic-gaze") w.lambda2 = 1.0;
  else if (dataset == "dada-2000") w.lambda2 = 0.2;
  else if (dataset == "bdd-a") w.lambda2 = 0.1;
  else if (dataset == "drfixd-rainy") w.lambda2 = 1.0;
  else throw Error(ErrorKind::Config, "unknown dataset preset '" + std::string(dataset) + "'");
  return w;
}

void validate(const LossWeights& w) {
  if (w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.lambda3 < 0.0) {
    throw Error(ErrorKind::Config, "loss weights must be non-negative");
  }
  if (!(w.lambda1 > 0.0 || w.lambda2 > 0.0 || w.lambda3 > 0.0)) {
    throw Error(ErrorKind::Config, "at least one loss weight must be positive");
  }
}

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_shapes(pred, gt, "bce_loss");
  auto p = pred.clamp(kLossEps, 1.0 - kLossEps);
  return -(gt * torch::log(p) + (1.0 - gt) * torch::log(1.0 - p)).mean();
}

torch::Tensor kld_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_shapes(pred, gt, "kld_loss");
  const bool single = pred.dim() <= 2;
  auto p = single ? pred.reshape({1, -1}) : pred.flatten(1);
  auto g = single ? gt.reshape({1, -1}) : gt.flatten(1);
  auto g_sum = g.sum(1, /*keepdim=*/true);
  if ((g_sum <= 0.0).any().item<bool>()) {
    throw Error(ErrorKind::DegenerateTarget, "kld: ground-truth map sums to zero");
  }
  p = p / (p.sum(1, true) + kLossEps);
  g = g / (g_sum + kLossEps);
  auto per_sample = (g * torch::log(g / (p + kLossEps) + kLossEps)).sum(1);
  return per_sample.mean();
}

torch::Tensor dd_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
  check_shapes(eps, eps_hat, "dd_loss");
  return (eps - eps_hat).pow(2).mean();
}

torch::Tensor total_loss(const std::vector<ScaleLoss>& terms, const LossWeights& w, std::size_t expected_scales) {
  validate(w);
  if (terms.empty() || terms.size() != expected_scales) {
    throw Error(ErrorKind::Shape, "total_loss: expected " + std::to_string(expected_scales) +
                                      " scales, got " + std::to_string(terms.size()));
  }
  torch::Tensor acc;
  for (const auto& t : terms) {
    if (!t.bce.defined() || !t.kld.defined() || !t.dd.defined()) {
      throw Error(ErrorKind::Shape, "total_loss: incomplete per-scale terms");
    }
    auto s = w.lambda1 * t.bce + w.lambda2 * t.kld + w.lambda3 * t.dd;
    acc = acc.defined() ? acc + s : s;
  }
  return acc / static_cast<double>(terms.size());
}

torch::Tensor upsample_to(const torch::Tensor& pred, std::int64_t height, std::int64_t width) {
  if (pred.size(-2) == height && pred.size(-1) == width) return pred;
  namespace F = torch::nn::functional;
  return F::interpolate(pred, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{height, width})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

}  // namespace diffattn
