#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "difftune/adamw.hpp"
#include "difftune/graph.hpp"
#include "difftune/mlp.hpp"
#include "difftune/pretrain.hpp"
#include "difftune/rewards.hpp"
#include "difftune/sampler.hpp"
#include "difftune/tasks.hpp"

namespace difftune {

struct TrainConfig {
  double clip_epsilon = 1e-4;
  int timesteps_per_iteration = 5;
  double beta_pretrain = 0.1;
  double learning_rate = 1e-4;
  int prompts_per_iteration = 16;
  int samples_per_prompt = 8;
  NormMode normalization = NormMode::per_batch;
  int max_iterations = 200;
  std::uint64_t seed = 0;
  double weight_decay = 1e-2;
  double grad_clip_norm = 1.0;
  int pretrain_batch = 32;
  double context_dropout = 0.1;
  int checkpoint_every = 0;  // 0 = final only
};

// One fine-tuning task: prompt distribution plus reward binding.
struct TaskBinding {
  enum class Reward { preference, composition, diversity };

  std::string name;
  TaskSpec spec;
  Reward reward = Reward::preference;
  PreferenceParams pref;

  bool distributional() const { return reward == Reward::diversity; }
};

struct RolloutBatch {
  std::vector<Context> contexts;       // one per trajectory
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;      // one per trajectory
  double mean_reward = 0.0;
  double mean_parity = 0.0;            // diversity tasks only; else NaN
  std::uint64_t theta_old_iteration = 0;
};

struct TrainerState {
  DenoiserParams theta;
  DenoiserParams theta_old;
  AdamWState opt;
  std::uint64_t iteration = 0;
  Rng rng_sampling;
  Rng rng_timesteps;
  Rng rng_pretrain;
  RunningStats running;  // per-prompt normalization mode
  std::uint64_t grad_clip_activations = 0;
};

TrainerState make_trainer_state(const DenoiserParams& base,
                                const TrainConfig& cfg);

struct TaskMetrics {
  std::string task;
  double mean_reward = 0.0;
  double loss_ppo = 0.0;           // mean over the iteration's updates
  double statistical_parity = 0.0; // NaN when not applicable
};

struct IterationMetrics {
  std::uint64_t iteration = 0;
  std::vector<TaskMetrics> tasks;
  double loss_pretrain = 0.0;  // NaN when beta == 0
  double wall_seconds = 0.0;
};

// Samples a full rollout batch under theta_old, applies rewards (scalar per
// trajectory, distributional per prompt-minibatch with broadcast) and
// normalizes advantages per config.
RolloutBatch collect_rollouts(const DenoiserParams& theta_old,
                              const TaskBinding& binding,
                              const TrainConfig& cfg, const TaskUniverse& u,
                              const NoiseSchedule& sched,
                              const SamplerConfig& sampler, Rng& rng,
                              RunningStats* running);

// Density ratio p_theta / p_theta_old for one stored transition, computed in
// log space.
double importance_ratio(const DenoiserParams& theta, const Trajectory& traj,
                        std::size_t transition, const NoiseSchedule& sched,
                        const SamplerConfig& sampler);

// g(eps, A) of the clipped surrogate.
inline double clip_term(double eps, double advantage) {
  if (eps <= 0.0) throw ContractError("clip_term: eps must be positive");
  return advantage >= 0.0 ? (1.0 + eps) * advantage
                          : (1.0 - eps) * advantage;
}

// Negated clipped surrogate -J over the batch restricted to the selected
// transition indices; differentiable w.r.t. theta through the ratio only.
Var ppo_objective(Tape& tape, const std::vector<Var>& params,
                  const MlpSpec& spec, const RolloutBatch& batch,
                  const std::vector<int>& selected_steps,
                  const NoiseSchedule& sched, const SamplerConfig& sampler,
                  double clip_epsilon);

// L = -J + beta * L_pre (minimization form of the mixed objective).
inline Var total_loss(Var ppo_loss, Var pretrain_loss, double beta) {
  if (beta < 0.0) throw ContractError("total_loss: beta must be >= 0");
  return add(ppo_loss, scale(pretrain_loss, beta));
}

// One outer iteration: refresh theta_old, per task collect rollouts and take
// one AdamW step per selected timestep, then one step on beta * L_pre.
IterationMetrics train_iteration(TrainerState& state,
                                 const std::vector<TaskBinding>& tasks,
                                 const std::vector<PretrainExample>& pretrain,
                                 const TrainConfig& cfg, const TaskUniverse& u,
                                 const NoiseSchedule& sched,
                                 const SamplerConfig& sampler);

using IterationCallback =
    std::function<void(const TrainerState&, const IterationMetrics&)>;

// Fixed-budget training loop; the callback fires after every iteration
// (metrics export, checkpointing).
std::vector<IterationMetrics> train(
    TrainerState& state, const std::vector<TaskBinding>& tasks,
    const std::vector<PretrainExample>& pretrain, const TrainConfig& cfg,
    const TaskUniverse& u, const NoiseSchedule& sched,
    const SamplerConfig& sampler, const IterationCallback& on_iteration = {});

// Helper shared with the baselines: converts dataset samples to loss inputs.
std::vector<PretrainExample> to_pretrain_examples(
    const std::vector<SceneSample>& data, const TaskUniverse& u);

}  // namespace difftune
