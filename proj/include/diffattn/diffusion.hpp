#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace diffattn {

/// Variance schedule over `total_steps` 0-based timesteps.
///
/// All quantities are kept in double precision; tensor-facing operations cast
/// the scalar coefficients to the tensor dtype only at the point of use.
struct NoiseSchedule {
  int total_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  /// Posterior (ancestral) transition std; sigma[0] = 0.
  std::vector<double> sigma;
};

/// Strictly decreasing timestep subsequence used at inference.
struct SamplingPlan {
  int total_steps = 0;
  std::vector<int> steps;

  int size() const { return static_cast<int>(steps.size()); }
};

/// Linear beta schedule from beta_start to beta_end with running-product alpha_bar.
NoiseSchedule make_schedule(int total_steps, double beta_start = 1e-4, double beta_end = 0.02);

/// x_tau = sqrt(abar_tau) x0 + sqrt(1 - abar_tau) eps.
torch::Tensor q_sample(const torch::Tensor& x0, int tau, const torch::Tensor& eps,
                       const NoiseSchedule& sched);

/// Batched forward diffusion with one timestep per leading-dimension element.
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& taus,
                       const torch::Tensor& eps, const NoiseSchedule& sched);

/// One ancestral reverse step: mean of p(x_{tau-1} | x_tau) plus sigma_tau * noise.
torch::Tensor ddpm_step(const torch::Tensor& x_tau, const torch::Tensor& eps_hat, int tau,
                        const NoiseSchedule& sched, const torch::Tensor& noise);

/// Clean-sample estimate implied by an epsilon prediction.
torch::Tensor predict_x0(const torch::Tensor& x_tau, const torch::Tensor& eps_hat, int tau,
                         const NoiseSchedule& sched);

/// Batched variant of predict_x0 with per-element timesteps.
torch::Tensor predict_x0(const torch::Tensor& x_tau, const torch::Tensor& eps_hat,
                         const torch::Tensor& taus, const NoiseSchedule& sched);

/// Generalized DDIM update from tau to tau_next. eta = 0 is the deterministic
/// sampler; eta > 0 requires `noise` of the same shape as x_tau.
torch::Tensor ddim_step(const torch::Tensor& x_tau, const torch::Tensor& eps_hat, int tau,
                        int tau_next, const NoiseSchedule& sched, double eta = 0.0,
                        const torch::Tensor& noise = {});

/// Evenly spaced plan with endpoints total_steps-1 and 0 (a single step when sample_steps == 1).
SamplingPlan plan_steps(int total_steps, int sample_steps);

/// Interleaved sinusoidal embedding: [sin(tau w_0), cos(tau w_0), sin(tau w_1), ...].
std::vector<double> time_embedding(std::int64_t tau, int dim);

/// Embeddings for a batch of timesteps, shape [B, dim], float64.
torch::Tensor time_embedding(const torch::Tensor& taus, int dim);

}  // namespace diffattn
