#include "difftune/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace difftune {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Guided noise prediction on the tape.
Var predict_eps_tape(Tape& tape, const std::vector<Var>& params,
                     const MlpSpec& spec, const Tensor& x_t, int t,
                     const Tensor& cemb, double guidance,
                     const NoiseSchedule& sched) {
  const Tensor temb = time_embedding(t, sched.T);
  if (guidance == 1.0) return mlp_forward(tape, params, spec, x_t, temb, cemb);
  const Tensor null_emb(Tensor({spec.context_dim}, 0.0));
  Var uncond = mlp_forward(tape, params, spec, x_t, temb, null_emb);
  if (guidance == 0.0) return uncond;
  Var cond = mlp_forward(tape, params, spec, x_t, temb, cemb);
  return add(uncond, scale(sub(cond, uncond), guidance));
}

// log p_theta(x_prev | x_t, c) for one stored transition, on the tape. The
// transition's sigma is schedule-determined, so only the mean carries theta.
Var transition_log_prob_tape(Tape& tape, const std::vector<Var>& params,
                             const MlpSpec& spec, const Trajectory& traj,
                             std::size_t k, const NoiseSchedule& sched,
                             const SamplerConfig& sampler) {
  const int t = traj.timesteps[k];
  const int t_prev = traj.timesteps[k + 1];
  const Tensor& x_t = traj.states[k];
  const Tensor& x_prev = traj.states[k + 1];

  Var eps_hat = predict_eps_tape(tape, params, spec, x_t, t,
                                 traj.context_embed, sampler.guidance_scale,
                                 sched);

  const double abar_t = sched.alpha_bar_at(t);
  const double abar_p = reverse_alpha_bar(sched, t_prev);
  const double var = reverse_variance(sched, t, t_prev, sampler.eta);
  if (var <= 0.0)
    throw ContractError("ppo_objective: degenerate transition variance");
  const double sa = std::sqrt(abar_t);
  const double sb = std::sqrt(1.0 - abar_t);
  const double dir = std::sqrt(std::max(0.0, 1.0 - abar_p - var));

  // x0_hat = (x_t - sb * eps_hat) / sa, clamped to the data box.
  Var x0_hat = scale(sub(make_leaf(tape, x_t), scale(eps_hat, sb)), 1.0 / sa);
  x0_hat = clamp(x0_hat, kX0ClampLo, kX0ClampHi);
  Var mean = add(scale(x0_hat, std::sqrt(abar_p)), scale(eps_hat, dir));

  constexpr double kLog2Pi = 1.8378770664093454836;
  const double d = static_cast<double>(x_prev.size());
  const double log_norm = -0.5 * d * (kLog2Pi + std::log(var));
  Var sq = sq_norm(sub(make_leaf(tape, x_prev), mean));
  return offset(scale(sq, -0.5 / var), log_norm);
}

}  // namespace

std::vector<PretrainExample> to_pretrain_examples(
    const std::vector<SceneSample>& data, const TaskUniverse& u) {
  std::vector<PretrainExample> out;
  out.reserve(data.size());
  for (const SceneSample& s : data)
    out.push_back(PretrainExample{u.embed(s.ctx), s.x0});
  return out;
}

TrainerState make_trainer_state(const DenoiserParams& base,
                                const TrainConfig& cfg) {
  TrainerState st;
  st.theta = base;
  st.theta_old = base;
  st.opt = AdamWState(base.param_count());
  st.rng_sampling = Rng(Rng::derive(cfg.seed, 1));
  st.rng_timesteps = Rng(Rng::derive(cfg.seed, 2));
  st.rng_pretrain = Rng(Rng::derive(cfg.seed, 3));
  return st;
}

RolloutBatch collect_rollouts(const DenoiserParams& theta_old,
                              const TaskBinding& binding,
                              const TrainConfig& cfg, const TaskUniverse& u,
                              const NoiseSchedule& sched,
                              const SamplerConfig& sampler, Rng& rng,
                              RunningStats* running) {
  if (sampler.eta <= 0.0)
    throw ContractError("collect_rollouts: eta > 0 required");
  if (binding.distributional() && cfg.samples_per_prompt < u.attr.n_bins())
    throw ContractError(
        "collect_rollouts: distributional minibatch smaller than the "
        "attribute bin count; a uniform empirical distribution is unattainable");

  RolloutBatch batch;
  batch.mean_parity = kNaN;
  const int n_prompts = cfg.prompts_per_iteration;
  const int n_samples = cfg.samples_per_prompt;
  batch.contexts.reserve(n_prompts * n_samples);
  batch.trajectories.reserve(n_prompts * n_samples);

  for (int p = 0; p < n_prompts; ++p) {
    const Context ctx = make_prompt(binding.spec, rng);
    const Tensor cemb = u.embed(ctx);
    const std::uint64_t base_seed = rng.next_u64();
    for (int s = 0; s < n_samples; ++s) {
      batch.contexts.push_back(ctx);
      batch.trajectories.push_back(sample_trajectory(
          theta_old, cemb, sampler, sched, Rng::derive(base_seed, s)));
    }
  }

  // Terminal rewards.
  std::vector<double> rewards(batch.trajectories.size(), 0.0);
  double parity_sum = 0.0;
  if (binding.distributional()) {
    for (int p = 0; p < n_prompts; ++p) {
      std::vector<Tensor> group;
      group.reserve(n_samples);
      for (int s = 0; s < n_samples; ++s)
        group.push_back(batch.trajectories[p * n_samples + s].final_sample());
      const std::vector<double> r = diversity_reward(group, u.attr);
      for (int s = 0; s < n_samples; ++s) rewards[p * n_samples + s] = r[s];
      parity_sum += -r[0];
    }
    batch.mean_parity = parity_sum / n_prompts;
  } else {
    for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
      const Tensor& x0 = batch.trajectories[i].final_sample();
      const Context& ctx = batch.contexts[i];
      rewards[i] = binding.reward == TaskBinding::Reward::preference
                       ? preference_reward(x0, ctx, u, binding.pref)
                       : composition_reward(x0, ctx, u);
    }
  }
  for (std::size_t i = 0; i < rewards.size(); ++i)
    batch.trajectories[i].reward = rewards[i];
  double reward_sum = 0.0;
  for (double r : rewards) reward_sum += r;
  batch.mean_reward = reward_sum / static_cast<double>(rewards.size());

  // Advantages. Distributional rewards normalize across the distinct
  // minibatch values, then broadcast to members.
  if (binding.distributional()) {
    std::vector<double> group_rewards(n_prompts);
    std::vector<std::uint64_t> group_keys(n_prompts);
    for (int p = 0; p < n_prompts; ++p) {
      group_rewards[p] = rewards[p * n_samples];
      group_keys[p] = batch.contexts[p * n_samples].key();
    }
    const AdvantageBatch adv =
        normalize_advantages(group_rewards, cfg.normalization, running,
                             cfg.normalization == NormMode::per_prompt
                                 ? &group_keys
                                 : nullptr);
    batch.advantages.resize(rewards.size());
    for (int p = 0; p < n_prompts; ++p)
      for (int s = 0; s < n_samples; ++s)
        batch.advantages[p * n_samples + s] = adv.adv[p];
  } else {
    std::vector<std::uint64_t> keys;
    if (cfg.normalization == NormMode::per_prompt) {
      keys.reserve(batch.contexts.size());
      for (const Context& c : batch.contexts) keys.push_back(c.key());
    }
    const AdvantageBatch adv = normalize_advantages(
        rewards, cfg.normalization, running,
        cfg.normalization == NormMode::per_prompt ? &keys : nullptr);
    batch.advantages = adv.adv;
  }
  return batch;
}

double importance_ratio(const DenoiserParams& theta, const Trajectory& traj,
                        std::size_t transition, const NoiseSchedule& sched,
                        const SamplerConfig& sampler) {
  if (transition >= traj.num_transitions())
    throw ContractError("importance_ratio: transition index out of range");
  const int t = traj.timesteps[transition];
  const int t_prev = traj.timesteps[transition + 1];
  const Tensor eps_hat = predict_eps(theta, traj.states[transition], t,
                                     traj.context_embed,
                                     sampler.guidance_scale, sched);
  const StepParams sp = reverse_step_params(
      eps_hat, traj.states[transition], t, t_prev, sched, sampler.eta);
  const double logp_new = gaussian_log_prob(traj.states[transition + 1],
                                            sp.mean, sp.stddev);
  const double logp_old = traj.log_probs[transition];
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old))
    throw ContractError("importance_ratio: non-finite log-prob at transition " +
                        std::to_string(transition));
  return std::exp(logp_new - logp_old);
}

Var ppo_objective(Tape& tape, const std::vector<Var>& params,
                  const MlpSpec& spec, const RolloutBatch& batch,
                  const std::vector<int>& selected_steps,
                  const NoiseSchedule& sched, const SamplerConfig& sampler,
                  double clip_epsilon) {
  if (selected_steps.empty())
    throw ContractError("ppo_objective: empty timestep selection");
  std::vector<Var> terms;
  terms.reserve(batch.trajectories.size() * selected_steps.size());
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const Trajectory& traj = batch.trajectories[i];
    const double advantage = batch.advantages[i];
    for (int k : selected_steps) {
      if (k < 0 || static_cast<std::size_t>(k) >= traj.num_transitions())
        throw ContractError("ppo_objective: selected step out of range");
      Var logp = transition_log_prob_tape(tape, params, spec, traj,
                                          static_cast<std::size_t>(k), sched,
                                          sampler);
      Var ratio = exp_op(offset(logp, -traj.log_probs[k]));
      Var surrogate = scale(ratio, advantage);
      terms.push_back(
          min_with_const(surrogate, clip_term(clip_epsilon, advantage)));
    }
  }
  return scale(mean_of(terms), -1.0);
}

namespace {

// One AdamW step on a tape loss; returns the loss value.
double gradient_step(TrainerState& state, Tape& tape,
                     const std::vector<Var>& params, Var loss,
                     const TrainConfig& cfg) {
  const Tape::BackwardResult res = tape.forward_backward(loss.id);
  if (!std::isfinite(res.value))
    throw ContractError("train_iteration: non-finite loss at iteration " +
                        std::to_string(state.iteration));
  std::vector<double> grads = collect_param_grads(res, params, state.theta);
  if (clip_grad_norm(grads, cfg.grad_clip_norm))
    state.grad_clip_activations += 1;
  std::vector<double> flat = state.theta.flatten();
  adamw_step(flat, grads, state.opt, cfg.learning_rate, cfg.weight_decay);
  state.theta.unflatten(flat);
  return res.value;
}

}  // namespace

IterationMetrics train_iteration(TrainerState& state,
                                 const std::vector<TaskBinding>& tasks,
                                 const std::vector<PretrainExample>& pretrain,
                                 const TrainConfig& cfg, const TaskUniverse& u,
                                 const NoiseSchedule& sched,
                                 const SamplerConfig& sampler) {
  const auto t_start = std::chrono::steady_clock::now();
  IterationMetrics metrics;
  metrics.iteration = state.iteration;
  state.theta_old = state.theta;  // refreshed exactly once per iteration

  // Shared timestep selection, drawn without replacement.
  const int n_transitions = sampler.num_inference_steps;
  if (cfg.timesteps_per_iteration > n_transitions)
    throw ContractError("train_iteration: more training timesteps than "
                        "inference steps");
  std::vector<int> pool(n_transitions);
  for (int i = 0; i < n_transitions; ++i) pool[i] = i;
  std::vector<int> selected;
  for (int i = 0; i < cfg.timesteps_per_iteration; ++i) {
    const std::size_t j = state.rng_timesteps.below(pool.size());
    selected.push_back(pool[j]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
  }

  for (const TaskBinding& binding : tasks) {
    RolloutBatch batch = collect_rollouts(
        state.theta_old, binding, cfg, u, sched, sampler, state.rng_sampling,
        cfg.normalization == NormMode::per_prompt ? &state.running : nullptr);
    batch.theta_old_iteration = state.iteration;

    double loss_sum = 0.0;
    for (int k : selected) {
      Tape tape;
      const std::vector<Var> params = lift_params(tape, state.theta);
      Var loss = ppo_objective(tape, params, state.theta.spec, batch, {k},
                               sched, sampler, cfg.clip_epsilon);
      loss_sum += gradient_step(state, tape, params, loss, cfg);
    }
    TaskMetrics tm;
    tm.task = binding.name;
    tm.mean_reward = batch.mean_reward;
    tm.loss_ppo = loss_sum / static_cast<double>(selected.size());
    tm.statistical_parity = batch.mean_parity;
    metrics.tasks.push_back(std::move(tm));
  }

  if (cfg.beta_pretrain > 0.0) {
    if (pretrain.empty())
      throw ContractError("train_iteration: beta > 0 but no pretraining data");
    std::vector<PretrainExample> minibatch;
    minibatch.reserve(cfg.pretrain_batch);
    for (int i = 0; i < cfg.pretrain_batch; ++i)
      minibatch.push_back(pretrain[state.rng_pretrain.below(pretrain.size())]);
    Tape tape;
    const std::vector<Var> params = lift_params(tape, state.theta);
    Var pre = pretraining_loss(tape, params, state.theta.spec, minibatch,
                               sched, cfg.context_dropout, state.rng_pretrain);
    Var loss = scale(pre, cfg.beta_pretrain);
    const double weighted = gradient_step(state, tape, params, loss, cfg);
    metrics.loss_pretrain = weighted / cfg.beta_pretrain;
  } else {
    metrics.loss_pretrain = kNaN;
  }

  state.iteration += 1;
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return metrics;
}

std::vector<IterationMetrics> train(
    TrainerState& state, const std::vector<TaskBinding>& tasks,
    const std::vector<PretrainExample>& pretrain, const TrainConfig& cfg,
    const TaskUniverse& u, const NoiseSchedule& sched,
    const SamplerConfig& sampler, const IterationCallback& on_iteration) {
  std::vector<IterationMetrics> series;
  series.reserve(cfg.max_iterations);
  for (int i = 0; i < cfg.max_iterations; ++i) {
    IterationMetrics m =
        train_iteration(state, tasks, pretrain, cfg, u, sched, sampler);
    if (on_iteration) on_iteration(state, m);
    series.push_back(std::move(m));
  }
  return series;
}

}  // namespace difftune
