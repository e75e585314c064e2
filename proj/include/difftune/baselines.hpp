#pragma once

#include <cstdint>
#include <vector>

#include "difftune/rl.hpp"

namespace difftune {

enum class BaselineMethod { reward_weighted, raft };

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::reward_weighted;
  double beta_rw = 0.5;     // temperature on min-max weights: w^(1/beta_rw)
  int raft_k = 8;           // samples per prompt
  int raft_accept = 1;      // retained per prompt (paper ratio 1/24)
  double learning_rate = 1e-4;
  int prompts_per_iteration = 16;
  int num_inference_steps = 50;
  double guidance_scale = 1.5;
  int max_iterations = 200;
  std::uint64_t seed = 0;
  double weight_decay = 1e-2;
  double grad_clip_norm = 1.0;
};

// w_i = (r_i - min) / (max - min); all ones when max == min.
std::vector<double> minmax_normalize(const std::vector<double>& rewards);

struct BaselineState {
  DenoiserParams theta;
  DenoiserParams frozen_base;  // reward-weighted generation source
  AdamWState opt;
  std::uint64_t iteration = 0;
  Rng rng_prompts;
  Rng rng_generate;
  Rng rng_train;
  std::uint64_t grad_clip_activations = 0;
  double peak_reward = 0.0;
  bool divergence_flagged = false;
};

BaselineState make_baseline_state(const DenoiserParams& base,
                                  const BaselineConfig& cfg);

struct BaselineIterationMetrics {
  std::uint64_t iteration = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  bool divergence_flag = false;
  double wall_seconds = 0.0;
};

// Reward-weighted fine-tuning: samples always come from the frozen base
// model; one AdamW step on the weight-normalized mean of per-sample
// noise-prediction losses against the generated samples.
BaselineIterationMetrics reward_weighted_step(BaselineState& state,
                                              const TaskBinding& binding,
                                              const BaselineConfig& cfg,
                                              const TaskUniverse& u,
                                              const NoiseSchedule& sched);

// RAFT: best-of-k self-distillation from the current model; ties on the
// acceptance boundary keep the lower sample index.
BaselineIterationMetrics raft_step(BaselineState& state,
                                   const TaskBinding& binding,
                                   const BaselineConfig& cfg,
                                   const TaskUniverse& u,
                                   const NoiseSchedule& sched);

// Divergence monitor: fires once the mean reward drops below half of its
// running peak. Pure so it can be driven by a rigged stream in tests.
bool divergence_monitor(double mean_reward, double& peak_reward);

std::vector<BaselineIterationMetrics> run_baseline(
    BaselineState& state, const TaskBinding& binding,
    const BaselineConfig& cfg, const TaskUniverse& u,
    const NoiseSchedule& sched);

}  // namespace difftune
