#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "difftune/mlp.hpp"
#include "difftune/rng.hpp"
#include "difftune/schedule.hpp"
#include "difftune/tensor.hpp"

namespace difftune {

// Predicted clean samples are clamped to this box before the reverse-step
// mean is formed; data is generated inside [-2, 2].
inline constexpr double kX0ClampLo = -3.0;
inline constexpr double kX0ClampHi = 3.0;

struct SamplerConfig {
  int num_inference_steps = 50;
  double eta = 1.0;
  double guidance_scale = 7.0;
};

// One denoising episode. states[0] is the initial noise x_T, states.back()
// is the final sample x_0. Transition k goes timesteps[k] -> timesteps[k+1]
// and stores the Gaussian policy it was sampled from.
struct Trajectory {
  Tensor context_embed;
  std::vector<int> timesteps;       // size num_inference_steps + 1, descending
  std::vector<Tensor> states;       // size num_inference_steps + 1
  std::vector<double> log_probs;    // per transition, under the sampling policy
  std::vector<Tensor> means;        // per transition
  std::vector<double> stds;         // per transition
  double reward = 0.0;
  std::uint64_t seed = 0;

  std::size_t num_transitions() const { return log_probs.size(); }
  const Tensor& final_sample() const { return states.back(); }
};

// Evenly spaced inference sub-schedule from T down to 0 (inclusive),
// steps + 1 grid points.
inline std::vector<int> inference_timesteps(const NoiseSchedule& s, int steps) {
  if (steps < 1 || steps > s.T)
    throw ContractError("inference_timesteps: need 1 <= steps <= T");
  std::vector<int> ts(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    ts[k] = static_cast<int>(std::lround(
        static_cast<double>(s.T) * (steps - k) / static_cast<double>(steps)));
  }
  return ts;
}

// Classifier-free guided prediction:
// eps_hat = eps(null) + w * (eps(c) - eps(null)). A zero embedding is the
// null context.
inline Tensor predict_eps(const DenoiserParams& p, const Tensor& x_t, int t,
                          const Tensor& cemb, double guidance_scale,
                          const NoiseSchedule& s) {
  const Tensor temb = time_embedding(t, s.T);
  if (guidance_scale == 1.0) return mlp_forward(p, x_t, temb, cemb);
  const Tensor null_emb(Tensor({p.spec.context_dim}, 0.0));
  Tensor uncond = mlp_forward(p, x_t, temb, null_emb);
  if (guidance_scale == 0.0) return uncond;
  const Tensor cond = mlp_forward(p, x_t, temb, cemb);
  for (std::size_t i = 0; i < uncond.size(); ++i)
    uncond.data[i] += guidance_scale * (cond.data[i] - uncond.data[i]);
  return uncond;
}

struct StepParams {
  Tensor mean;
  double stddev = 0.0;
};

// alpha_bar used on the reverse path. t == 0 maps to alpha_bar(1) so the
// final transition keeps a positive variance when eta > 0 (the sub-schedule
// never steps 1 -> 0 in RL use).
inline double reverse_alpha_bar(const NoiseSchedule& s, int t) {
  return t == 0 ? s.alpha_bar_at(1) : s.alpha_bar_at(t);
}

// Variance of the stochastic DDIM transition t -> t_prev; negative values
// from roundoff are clamped to 0.
inline double reverse_variance(const NoiseSchedule& s, int t, int t_prev,
                               double eta) {
  const double abar_t = s.alpha_bar_at(t);
  const double abar_p = reverse_alpha_bar(s, t_prev);
  const double var = eta * eta * ((1.0 - abar_p) / (1.0 - abar_t)) *
                     (1.0 - abar_t / abar_p);
  return var < 0.0 ? 0.0 : var;
}

// Stochastic DDIM update: the Gaussian policy p(x_{t_prev} | x_t, c).
inline StepParams reverse_step_params(const Tensor& eps_hat, const Tensor& x_t,
                                      int t, int t_prev,
                                      const NoiseSchedule& s, double eta) {
  if (t <= t_prev || t_prev < 0)
    throw ContractError("reverse_step_params: need t > t_prev >= 0");
  if (eta < 0.0 || eta > 1.0)
    throw ContractError("reverse_step_params: eta outside [0, 1]");
  require_same_shape(eps_hat, x_t, "reverse_step_params");

  const double abar_t = s.alpha_bar_at(t);
  const double abar_p = reverse_alpha_bar(s, t_prev);
  const double var = reverse_variance(s, t, t_prev, eta);
  if (eta > 0.0 && var <= 0.0) {
    throw ContractError(
        "reverse_step_params: degenerate variance at t=" + std::to_string(t) +
        " -> " + std::to_string(t_prev) + " with eta > 0; the policy density "
        "is undefined for RL use");
  }

  const double sa = std::sqrt(abar_t);
  const double sb = std::sqrt(1.0 - abar_t);
  const double dir = std::sqrt(std::max(0.0, 1.0 - abar_p - var));
  StepParams out;
  out.mean = Tensor(x_t.shape);
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double x0_hat = (x_t.data[i] - sb * eps_hat.data[i]) / sa;
    if (x0_hat < kX0ClampLo) x0_hat = kX0ClampLo;
    if (x0_hat > kX0ClampHi) x0_hat = kX0ClampHi;
    out.mean.data[i] = std::sqrt(abar_p) * x0_hat + dir * eps_hat.data[i];
  }
  out.stddev = std::sqrt(var);
  return out;
}

// Isotropic normal log-density, summed over dimensions.
inline double gaussian_log_prob(const Tensor& x, const Tensor& mu,
                                double sigma) {
  if (sigma <= 0.0)
    throw ContractError("gaussian_log_prob: sigma must be positive");
  require_same_shape(x, mu, "gaussian_log_prob");
  constexpr double kLog2Pi = 1.8378770664093454836;
  const std::size_t d = x.size();
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double z = x.data[i] - mu.data[i];
    sq += z * z;
  }
  return -0.5 * d * (kLog2Pi + 2.0 * std::log(sigma)) -
         sq / (2.0 * sigma * sigma);
}

// Samples one full denoising episode under the guided policy and records
// everything the importance ratio needs. Reproducible from the seed.
inline Trajectory sample_trajectory(const DenoiserParams& p,
                                    const Tensor& cemb,
                                    const SamplerConfig& cfg,
                                    const NoiseSchedule& s,
                                    std::uint64_t seed) {
  if (cfg.eta <= 0.0)
    throw ContractError("sample_trajectory: eta > 0 required (zero-variance "
                        "policy has undefined log-density)");
  Rng rng(seed);
  Trajectory traj;
  traj.seed = seed;
  traj.context_embed = cemb;
  traj.timesteps = inference_timesteps(s, cfg.num_inference_steps);
  traj.states.reserve(traj.timesteps.size());
  traj.states.push_back(rng.gaussian_vec(p.spec.sample_dim));

  for (std::size_t k = 0; k + 1 < traj.timesteps.size(); ++k) {
    const int t = traj.timesteps[k];
    const int t_prev = traj.timesteps[k + 1];
    const Tensor& x_t = traj.states.back();
    const Tensor eps_hat =
        predict_eps(p, x_t, t, cemb, cfg.guidance_scale, s);
    StepParams sp = reverse_step_params(eps_hat, x_t, t, t_prev, s, cfg.eta);
    Tensor x_next(x_t.shape);
    for (std::size_t i = 0; i < x_next.size(); ++i)
      x_next.data[i] = sp.mean.data[i] + sp.stddev * rng.gaussian();
    traj.log_probs.push_back(gaussian_log_prob(x_next, sp.mean, sp.stddev));
    traj.means.push_back(std::move(sp.mean));
    traj.stds.push_back(sp.stddev);
    traj.states.push_back(std::move(x_next));
  }
  return traj;
}

// Deterministic DDIM sampling (eta = 0); used by the supervised baselines
// where no policy density is needed.
inline Tensor sample_ddim(const DenoiserParams& p, const Tensor& cemb,
                          int num_inference_steps, double guidance_scale,
                          const NoiseSchedule& s, Rng& rng) {
  const std::vector<int> ts = inference_timesteps(s, num_inference_steps);
  Tensor x = rng.gaussian_vec(p.spec.sample_dim);
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const Tensor eps_hat = predict_eps(p, x, ts[k], cemb, guidance_scale, s);
    x = reverse_step_params(eps_hat, x, ts[k], ts[k + 1], s, 0.0).mean;
  }
  return x;
}

}  // namespace difftune
