#include <algorithm>
#include <cmath>
#include <set>

#include <doctest.h>
#include <torch/torch.h>

#include "diffattn/decoder.hpp"
#include "helpers.hpp"

using namespace diffattn;

namespace {

FusedPyramid random_fused(int c, int h, int w, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  FusedPyramid f;
  f.base_channels = c;
  for (int i = 0; i < kNumLevels; ++i) {
    const auto e = level_shape(i, c, h, w);
    f.out[static_cast<std::size_t>(i)] = testing::randn64({1, e[0], e[1], e[2]}, seed + i).to(dtype);
  }
  return f;
}

// Exact noise for a known clean latent x0.
EpsilonFn oracle_eps(const torch::Tensor& x0, const NoiseSchedule& s) {
  return [x0, &s](const torch::Tensor& x, int tau) {
    const double ab = s.alpha_bar[static_cast<std::size_t>(tau)];
    return (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
  };
}

}  // namespace

TEST_CASE("condition builder shapes and input widths") {
  CHECK(ConditionBuilderImpl::input_channels(0, 4) == 60);
  CHECK(ConditionBuilderImpl::input_channels(3, 4) == 32);
  torch::manual_seed(1);
  const auto fused = random_fused(4, 64, 96, 1);
  std::optional<torch::Tensor> coarser;
  for (int s = 3; s >= 0; --s) {
    ConditionBuilder cb(s, 4, 8);
    CHECK(static_cast<bool>(cb->g) == (s < 3));
    const auto [h, w] = scale_size(s, 64, 96);
    const auto c = cb->forward(fused, coarser, 64, 96);
    CHECK(c.scale == s);
    CHECK(c.volume.sizes() == torch::IntArrayRef({1, 8, h, w}));
    coarser = torch::rand({1, 1, h, w});
  }
  CHECK_ERROR_KIND(ConditionBuilder(4, 4, 8), ErrorKind::Config);
}

TEST_CASE("condition builder enforces the coarse-to-fine dependency") {
  const auto fused = random_fused(4, 64, 64, 2);
  ConditionBuilder top(3, 4, 8);
  ConditionBuilder fine(1, 4, 8);
  CHECK_ERROR_KIND(fine->forward(fused, std::nullopt, 64, 64), ErrorKind::Dependency);
  CHECK_ERROR_KIND(top->forward(fused, torch::rand({1, 1, 4, 4}), 64, 64), ErrorKind::Dependency);
  CHECK_ERROR_KIND(fine->forward(fused, torch::rand({1, 1, 8, 8}), 64, 64), ErrorKind::Contract);
  CHECK_ERROR_KIND(fine->forward(fused, torch::rand({1, 1, 16, 16}), 64, 96), ErrorKind::Contract);
}

TEST_CASE("condition volume matches a functional reimplementation") {
  torch::manual_seed(3);
  const auto fused = random_fused(2, 64, 64, 3, torch::kFloat64);
  ConditionBuilder cb(1, 2, 4);
  cb->to(torch::kFloat64);
  const auto prev = testing::randn64({1, 1, 16, 16}, 4).sigmoid();
  const auto got = cb->forward(fused, prev, 64, 64).volume;

  namespace F = torch::nn::functional;
  auto up = [](const torch::Tensor& x, std::int64_t s) {
    return F::interpolate(x, F::InterpolateFuncOptions().size(std::vector<int64_t>{s, s}).mode(torch::kBilinear).align_corners(false));
  };
  const auto cat = torch::cat({up(fused.out[1], 32), up(fused.out[2], 32), up(fused.out[3], 32)}, 1);
  auto expect = torch::elu(F::conv2d(cat, cb->f->weight, F::Conv2dFuncOptions().bias(cb->f->bias).padding(1)));
  expect = expect + up(F::conv2d(prev, cb->g->weight, F::Conv2dFuncOptions().bias(cb->g->bias)), 32);
  CHECK((got - expect).abs().max().item<double>() < 1e-12);
}

TEST_CASE("noise predictor gradients agree with finite differences") {
  torch::manual_seed(5);
  NoisePredictor net(4, UNetConfig{8, 16, 4});
  net->to(torch::kFloat64);
  auto noisy = testing::randn64({1, 1, 8, 8}, 6).set_requires_grad(true);
  auto cond = testing::randn64({1, 4, 8, 8}, 7).set_requires_grad(true);
  const auto taus = torch::tensor({37}, torch::kLong);
  const auto weight = testing::randn64({1, 1, 8, 8}, 8);
  auto objective = [&](const torch::Tensor& n, const torch::Tensor& c) { return (net->forward(n, taus, c) * weight).sum(); };
  objective(noisy, cond).backward();

  torch::NoGradGuard g;
  const double h = 1e-6;
  for (auto [tensor, idx] : {std::pair{noisy, std::vector<std::int64_t>{0, 0, 3, 4}},
                             std::pair{noisy, std::vector<std::int64_t>{0, 0, 7, 0}},
                             std::pair{cond, std::vector<std::int64_t>{0, 2, 1, 5}},
                             std::pair{cond, std::vector<std::int64_t>{0, 3, 6, 6}}}) {
    auto plus = tensor.detach().clone();
    auto minus = tensor.detach().clone();
    plus.index_put_({idx[0], idx[1], idx[2], idx[3]}, plus.index({idx[0], idx[1], idx[2], idx[3]}) + h);
    minus.index_put_({idx[0], idx[1], idx[2], idx[3]}, minus.index({idx[0], idx[1], idx[2], idx[3]}) - h);
    const bool is_noisy = tensor.data_ptr() == noisy.data_ptr();
    const double fp = is_noisy ? objective(plus, cond.detach()).item<double>() : objective(noisy.detach(), plus).item<double>();
    const double fm = is_noisy ? objective(minus, cond.detach()).item<double>() : objective(noisy.detach(), minus).item<double>();
    const double numeric = (fp - fm) / (2 * h);
    const double analytic = tensor.grad().index({idx[0], idx[1], idx[2], idx[3]}).item<double>();
    CHECK(analytic == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("noise predictor validates shapes and responds to the timestep") {
  torch::manual_seed(9);
  NoisePredictor net(4, UNetConfig{8, 16, 4});
  const auto x = torch::randn({2, 1, 8, 12});
  const auto c = torch::randn({2, 4, 8, 12});
  const auto out = net->forward(x, torch::tensor({3, 200}, torch::kLong), c);
  CHECK(out.sizes() == x.sizes());
  const auto other = net->forward(x, torch::tensor({4, 200}, torch::kLong), c);
  CHECK_FALSE(torch::allclose(out[0], other[0]));
  CHECK(torch::allclose(out[1], other[1]));
  CHECK_ERROR_KIND(net->forward(x, torch::tensor({1, 1}), torch::randn({2, 4, 8, 8})), ErrorKind::Shape);
  CHECK_ERROR_KIND(net->forward(torch::randn({2, 1, 6, 8}), torch::tensor({1, 1}), torch::randn({2, 4, 6, 8})),
                   ErrorKind::Shape);
}

TEST_CASE("sampling with the exact noise recovers the clean latent") {
  const auto s = make_schedule(300);
  const auto x0 = testing::randn64({1, 1, 8, 8}, 10);
  for (int te : {1, 2, 15, 300}) {
    for (double eta : {0.0, 1.0}) {
      const auto plan = plan_steps(300, te);
      Trajectory traj;
      const auto out = sample_latent(oracle_eps(x0, s), {1, 1, 8, 8}, torch::TensorOptions().dtype(torch::kFloat64), s,
                                     plan, 77, eta, &traj);
      CHECK((out - x0).abs().max().item<double>() < 1e-8);
      REQUIRE(traj.size() == plan.steps.size() + 1);
      CHECK(traj.front().first == plan.steps.front());
      CHECK(traj.back().first == -1);
      CHECK(torch::equal(traj.front().second, initial_latent({1, 1, 8, 8}, 77, torch::kFloat64)));
    }
  }
}

TEST_CASE("sampling counts network evaluations and validates the plan") {
  const auto s = make_schedule(300);
  int calls = 0;
  EpsilonFn zero = [&](const torch::Tensor& x, int) {
    ++calls;
    return torch::zeros_like(x);
  };
  sample_latent(zero, {1, 1, 4, 4}, torch::kFloat64, s, plan_steps(300, 15), 1);
  CHECK(calls == 15);
  CHECK_ERROR_KIND(sample_latent(zero, {1, 1, 4, 4}, torch::kFloat64, s, plan_steps(200, 15), 1), ErrorKind::Plan);
  SamplingPlan bad = plan_steps(300, 3);
  bad.steps[0] = 300;
  CHECK_ERROR_KIND(sample_latent(zero, {1, 1, 4, 4}, torch::kFloat64, s, bad, 1), ErrorKind::Plan);
  EpsilonFn nan = [](const torch::Tensor& x, int) { return torch::full_like(x, std::nan("")); };
  CHECK_ERROR_KIND(sample_latent(nan, {1, 1, 4, 4}, torch::kFloat64, s, plan_steps(300, 3), 1), ErrorKind::Numeric);
}

TEST_CASE("seeded sampling is reproducible") {
  const auto s = make_schedule(300);
  EpsilonFn half = [](const torch::Tensor& x, int) { return 0.5 * x; };
  const auto plan = plan_steps(300, 5);
  const auto a = sample_latent(half, {1, 1, 4, 4}, torch::kFloat64, s, plan, 5, 0.5);
  const auto b = sample_latent(half, {1, 1, 4, 4}, torch::kFloat64, s, plan, 5, 0.5);
  const auto c = sample_latent(half, {1, 1, 4, 4}, torch::kFloat64, s, plan, 6, 0.5);
  CHECK(torch::equal(a, b));
  CHECK_FALSE(torch::equal(a, c));
  const auto seeds = scale_seeds(5);
  CHECK(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == kNumScales);
  CHECK(seeds == scale_seeds(5));
  CHECK(seeds != scale_seeds(6));
}

TEST_CASE("clipped sampling matches a scalar loop and keeps the range") {
  const auto s = make_schedule(300);
  const auto plan = plan_steps(300, 4);
  // Pushes clean estimates far below the range.
  EpsilonFn push = [](const torch::Tensor& x, int) { return x + 3.0; };
  const auto got = sample_latent(push, {1, 1, 3, 3}, torch::kFloat64, s, plan, 8, 0.0, nullptr, LatentRange{});
  CHECK(got.min().item<double>() >= 0.0);
  CHECK(got.max().item<double>() <= 2.0);

  const auto start = initial_latent({1, 1, 3, 3}, 8, torch::kFloat64);
  for (std::int64_t k = 0; k < 9; ++k) {
    double x = start.view(-1)[k].item<double>();
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
      const double ab = s.alpha_bar[static_cast<std::size_t>(plan.steps[i])];
      const double e = x + 3.0;
      const double x0 = std::clamp((x - std::sqrt(1 - ab) * e) / std::sqrt(ab), 0.0, 2.0);
      const double e2 = (x - std::sqrt(ab) * x0) / std::sqrt(1 - ab);
      if (i + 1 == plan.steps.size()) {
        x = x0;
      } else {
        const double ab_next = s.alpha_bar[static_cast<std::size_t>(plan.steps[i + 1])];
        x = std::sqrt(ab_next) * x0 + std::sqrt(1 - ab_next) * e2;
      }
    }
    CHECK(got.view(-1)[k].item<double>() == doctest::Approx(x).epsilon(1e-10));
  }

  // In-range oracle chains are unaffected.
  const auto x0 = testing::randn64({1, 1, 8, 8}, 12).sigmoid() * 2.0;
  const auto clipped = sample_latent(oracle_eps(x0, s), {1, 1, 8, 8}, torch::kFloat64, s, plan_steps(300, 15), 3, 0.0,
                                     nullptr, LatentRange{});
  CHECK((clipped - x0).abs().max().item<double>() < 1e-8);
}

TEST_CASE("training timesteps are uniform over the schedule") {
  const auto s = make_schedule(300);
  auto gen = testing::make_gen(123);
  const int n = 30000;
  std::array<torch::Tensor, kNumScales> gt;
  for (std::size_t i = 0; i < kNumScales; ++i) gt[i] = torch::rand({n, 1, 4 >> (i / 2), 4 >> (i / 2)}, torch::kFloat64);
  const auto lat = train_step_latents(gt, s, gen);
  const auto taus = lat[0].taus;
  CHECK(taus.min().item<int>() == 0);
  CHECK(taus.max().item<int>() == 299);
  // Ten bins of width 30; chi-square with 9 degrees of freedom, 0.999 quantile 27.88.
  const auto counts = torch::bincount(taus.div(30, "floor"), {}, 10).to(torch::kFloat64);
  const double expected = n / 10.0;
  const double chi2 = ((counts - expected).square() / expected).sum().item<double>();
  CHECK(chi2 < 27.88);
  CHECK_FALSE(torch::equal(lat[0].taus, lat[1].taus));
}

TEST_CASE("training latents and the one-step prediction") {
  const auto s = make_schedule(300);
  auto gen = testing::make_gen(9);
  std::array<torch::Tensor, kNumScales> gt;
  for (std::size_t i = 0; i < kNumScales; ++i) gt[i] = torch::rand({3, 1, 8, 8}, torch::kFloat64);
  gt[0][0].zero_();
  const auto lat = train_step_latents(gt, s, gen);
  for (std::size_t i = 0; i < kNumScales; ++i) {
    CHECK(torch::allclose(lat[i].target, torch::logit(gt[i].clamp(1e-4, 1 - 1e-4)) / std::log(9999.0) + 1.0));
    CHECK(torch::allclose(lat[i].noisy, q_sample(lat[i].target, lat[i].taus, lat[i].eps, s)));
    const auto pred = training_prediction(lat[i], lat[i].eps, s);
    CHECK((pred - gt[i].clamp(1e-4, 1 - 1e-4)).abs().max().item<double>() < 1e-9);
  }
  CHECK(std::abs(to_logit_domain(torch::zeros({1}, torch::kFloat64)).item<double>()) < 1e-12);
  CHECK(to_logit_domain(torch::ones({1}, torch::kFloat64)).item<double>() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(to_logit_domain(torch::full({1}, 0.5, torch::kFloat64)).item<double>() == doctest::Approx(1.0).epsilon(1e-12));
  const auto mid = torch::linspace(0.01, 0.99, 50, torch::kFloat64);
  CHECK((from_logit_domain(to_logit_domain(mid)) - mid).abs().max().item<double>() < 1e-12);
  gt[2] = torch::rand({3, 8, 8});
  CHECK_ERROR_KIND(train_step_latents(gt, s, gen), ErrorKind::Shape);
}

TEST_CASE("multi-scale decoding runs coarse to fine") {
  torch::manual_seed(21);
  MultiScaleDecoder dec(4, UNetConfig{8, 16, 4});
  const auto fused = random_fused(4, 64, 64, 30);
  const auto s = make_schedule(300);
  const auto plan = plan_steps(300, 3);
  const auto seeds = scale_seeds(1);
  std::array<Trajectory, kNumScales> traj;
  const auto a = dec->decode_all(fused, 64, 64, s, plan, seeds, 0.0, &traj);
  for (int sc = 0; sc < kNumScales; ++sc) {
    const auto& m = a.maps[static_cast<std::size_t>(sc)];
    CHECK(m.sizes() == torch::IntArrayRef({1, 1, 64 >> sc, 64 >> sc}));
    // Closed interval: float32 sigmoid saturates for an untrained predictor.
    CHECK((m >= 0).all().item<bool>());
    CHECK((m <= 1).all().item<bool>());
    CHECK(traj[static_cast<std::size_t>(sc)].size() == 4);
  }
  CHECK(a.finest().data_ptr() == a.maps[0].data_ptr());

  // Perturbing the finest-scale feedback path changes scale 0 only.
  {
    torch::NoGradGuard g;
    dec->condition(0)->g->weight.add_(1.0);
  }
  const auto b = dec->decode_all(fused, 64, 64, s, plan, seeds);
  for (std::size_t sc = 1; sc < kNumScales; ++sc) CHECK(torch::equal(a.maps[sc], b.maps[sc]));
  CHECK_FALSE(torch::equal(a.maps[0], b.maps[0]));
}
