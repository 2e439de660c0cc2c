#include "diffattn/diffusion.hpp"

#include <cmath>
#include <string>

#include "diffattn/error.hpp"

namespace diffattn {
namespace {

void check_step(int tau, const NoiseSchedule& sched, const char* what) {
  if (tau < 0 || tau >= sched.total_steps) {
    throw Error(ErrorKind::Step, std::string(what) + " " + std::to_string(tau) +
                                     " outside [0, " + std::to_string(sched.total_steps) + ")");
  }
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw Error(ErrorKind::Shape, std::string(what) + ": shape mismatch");
  }
}

// Gathers per-element coefficients as a tensor broadcastable against x.
torch::Tensor gather_coeff(const std::vector<double>& table, const torch::Tensor& taus,
                           const torch::Tensor& like) {
  auto idx = taus.to(torch::kLong).cpu();
  const auto n = idx.size(0);
  if (n != like.size(0)) throw Error(ErrorKind::Shape, "timestep count does not match batch size");
  auto acc = idx.accessor<std::int64_t, 1>();
  auto out = torch::empty({n}, torch::dtype(torch::kFloat64));
  auto oacc = out.accessor<double, 1>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto t = acc[i];
    if (t < 0 || t >= static_cast<std::int64_t>(table.size())) {
      throw Error(ErrorKind::Step, "timestep " + std::to_string(t) + " outside schedule");
    }
    oacc[i] = table[static_cast<std::size_t>(t)];
  }
  std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = n;
  return out.to(like.options()).view(shape);
}

}  // namespace

NoiseSchedule make_schedule(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) {
    throw Error(ErrorKind::Config, "total_steps must be >= 1, got " + std::to_string(total_steps));
  }
  if (!(beta_start > 0.0)) {
    throw Error(ErrorKind::Config, "beta_start must be > 0, got " + std::to_string(beta_start));
  }
  if (!(beta_end >= beta_start)) {
    throw Error(ErrorKind::Config, "beta_end must be >= beta_start, got " + std::to_string(beta_end));
  }
  if (!(beta_end < 1.0)) {
    throw Error(ErrorKind::Config, "beta_end must be < 1, got " + std::to_string(beta_end));
  }

  NoiseSchedule s;
  s.total_steps = total_steps;
  const auto n = static_cast<std::size_t>(total_steps);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  s.sigma.resize(n);
  double running = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t) / (total_steps - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    running *= s.alpha[t];
    s.alpha_bar[t] = running;
  }
  s.sigma[0] = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    const double var = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    s.sigma[t] = std::sqrt(var);
  }
  return s;
}

torch::Tensor q_sample(const torch::Tensor& x0, int tau, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
  check_step(tau, sched, "q_sample: tau");
  check_same_shape(x0, eps, "q_sample");
  const double abar = sched.alpha_bar[static_cast<std::size_t>(tau)];
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& taus,
                       const torch::Tensor& eps, const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "q_sample");
  auto abar = gather_coeff(sched.alpha_bar, taus, x0);
  return abar.sqrt() * x0 + (1.0 - abar).sqrt() * eps;
}

torch::Tensor ddpm_step(const torch::Tensor& x_tau, const torch::Tensor& eps_hat, int tau,
                        const NoiseSchedule& sched, const torch::Tensor& noise) {
  if (tau == 0) throw Error(ErrorKind::Step, "ddpm_step: tau = 0 has no further transition");
  check_step(tau, sched, "ddpm_step: tau");
  check_same_shape(x_tau, eps_hat, "ddpm_step");
  check_same_shape(x_tau, noise, "ddpm_step noise");
  const auto t = static_cast<std::size_t>(tau);
  const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  auto mean = (x_tau - coef * eps_hat) / std::sqrt(sched.alpha[t]);
  return mean + sched.sigma[t] * noise;
}

torch::Tensor predict_x0(const torch::Tensor& x_tau, const torch::Tensor& eps_hat, int tau,
                         const NoiseSchedule& sched) {
  check_step(tau, sched, "predict_x0: tau");
  check_same_shape(x_tau, eps_hat, "predict_x0");
  const double abar = sched.alpha_bar[static_cast<std::size_t>(tau)];
  return (x_tau - std::sqrt(1.0 - abar) * eps_hat) / std::sqrt(abar);
}

torch::Tensor predict_x0(const torch::Tensor& x_tau, const torch::Tensor& eps_hat,
                         const torch::Tensor& taus, const NoiseSchedule& sched) {
  check_same_shape(x_tau, eps_hat, "predict_x0");
  auto abar = gather_coeff(sched.alpha_bar, taus, x_tau);
  return (x_tau - (1.0 - abar).sqrt() * eps_hat) / abar.sqrt();
}

torch::Tensor ddim_step(const torch::Tensor& x_tau, const torch::Tensor& eps_hat, int tau,
                        int tau_next, const NoiseSchedule& sched, double eta,
                        const torch::Tensor& noise) {
  check_step(tau, sched, "ddim_step: tau");
  if (tau_next >= tau) {
    throw Error(ErrorKind::Ordering, "ddim_step: tau_next " + std::to_string(tau_next) +
                                         " must be < tau " + std::to_string(tau));
  }
  check_step(tau_next, sched, "ddim_step: tau_next");
  check_same_shape(x_tau, eps_hat, "ddim_step");

  const double abar = sched.alpha_bar[static_cast<std::size_t>(tau)];
  const double abar_next = sched.alpha_bar[static_cast<std::size_t>(tau_next)];
  auto x0_hat = (x_tau - std::sqrt(1.0 - abar) * eps_hat) / std::sqrt(abar);
  if (eta == 0.0) {
    return std::sqrt(abar_next) * x0_hat + std::sqrt(1.0 - abar_next) * eps_hat;
  }
  if (eta < 0.0) throw Error(ErrorKind::Config, "ddim_step: eta must be >= 0");
  check_same_shape(x_tau, noise, "ddim_step noise");
  const double sigma = eta * std::sqrt((1.0 - abar_next) / (1.0 - abar)) *
                       std::sqrt(1.0 - abar / abar_next);
  const double dir = std::sqrt(std::max(0.0, 1.0 - abar_next - sigma * sigma));
  return std::sqrt(abar_next) * x0_hat + dir * eps_hat + sigma * noise;
}

SamplingPlan plan_steps(int total_steps, int sample_steps) {
  if (total_steps < 1) throw Error(ErrorKind::Plan, "plan: total_steps must be >= 1");
  if (sample_steps < 1 || sample_steps > total_steps) {
    throw Error(ErrorKind::Plan, "plan: sample_steps " + std::to_string(sample_steps) +
                                     " must lie in [1, " + std::to_string(total_steps) + "]");
  }
  SamplingPlan plan;
  plan.total_steps = total_steps;
  plan.steps.reserve(static_cast<std::size_t>(sample_steps));
  if (sample_steps == 1) {
    plan.steps.push_back(total_steps - 1);
    return plan;
  }
  // Rounded positions k * (T_i - 1) / (T_e - 1), largest first, in integer arithmetic.
  const std::int64_t span = total_steps - 1;
  const std::int64_t denom = sample_steps - 1;
  for (std::int64_t k = denom; k >= 0; --k) {
    plan.steps.push_back(static_cast<int>((2 * k * span + denom) / (2 * denom)));
  }
  return plan;
}

std::vector<double> time_embedding(std::int64_t tau, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw Error(ErrorKind::Config, "time embedding dim must be even and >= 2, got " +
                                       std::to_string(dim));
  }
  std::vector<double> out(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    const double arg = static_cast<double>(tau) * freq;
    out[static_cast<std::size_t>(2 * k)] = std::sin(arg);
    out[static_cast<std::size_t>(2 * k + 1)] = std::cos(arg);
  }
  return out;
}

torch::Tensor time_embedding(const torch::Tensor& taus, int dim) {
  auto idx = taus.to(torch::kLong).cpu().contiguous();
  const auto n = idx.numel();
  auto out = torch::empty({n, dim}, torch::dtype(torch::kFloat64));
  auto acc = idx.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto row = time_embedding(acc[i], dim);
    std::copy(row.begin(), row.end(), out[i].data_ptr<double>());
  }
  return out;
}

}  // namespace diffattn
