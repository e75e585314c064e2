#include "difftune/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace difftune {

std::vector<double> minmax_normalize(const std::vector<double>& rewards) {
  if (rewards.empty()) throw ContractError("minmax_normalize: empty rewards");
  const auto [lo_it, hi_it] = std::minmax_element(rewards.begin(), rewards.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) return std::vector<double>(rewards.size(), 1.0);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - lo) / (hi - lo));
  return out;
}

BaselineState make_baseline_state(const DenoiserParams& base,
                                  const BaselineConfig& cfg) {
  BaselineState st;
  st.theta = base;
  st.frozen_base = base;
  st.opt = AdamWState(base.param_count());
  st.rng_prompts = Rng(Rng::derive(cfg.seed, 11));
  st.rng_generate = Rng(Rng::derive(cfg.seed, 12));
  st.rng_train = Rng(Rng::derive(cfg.seed, 13));
  return st;
}

bool divergence_monitor(double mean_reward, double& peak_reward) {
  peak_reward = std::max(peak_reward, mean_reward);
  return peak_reward > 0.0 && mean_reward < 0.5 * peak_reward;
}

namespace {

double scalar_reward(const Tensor& x0, const Context& ctx,
                     const TaskUniverse& u, const TaskBinding& binding) {
  if (binding.distributional())
    throw ContractError("baselines: distributional rewards are not supported; "
                        "per-sample selection needs a scalar reward");
  return binding.reward == TaskBinding::Reward::preference
             ? preference_reward(x0, ctx, u, binding.pref)
             : composition_reward(x0, ctx, u);
}

// One AdamW step on a weighted combination of noise-prediction losses over
// generated (context, sample) pairs. Weight normalization is the caller's
// responsibility; weights are used as given.
double weighted_denoise_step(BaselineState& state,
                             const std::vector<Context>& contexts,
                             const std::vector<Tensor>& samples,
                             const std::vector<double>& weights,
                             const BaselineConfig& cfg, const TaskUniverse& u,
                             const NoiseSchedule& sched) {
  std::vector<PretrainExample> batch;
  batch.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    batch.push_back(PretrainExample{u.embed(contexts[i]), samples[i]});
  const auto draws = draw_pretrain_noise(batch, sched, 0.0, state.rng_train);

  Tape tape;
  const std::vector<Var> params = lift_params(tape, state.theta);
  const std::vector<Var> losses = per_sample_pretrain_losses(
      tape, params, state.theta.spec, batch, draws, sched);
  Var loss = weighted_sum(losses, weights);

  const Tape::BackwardResult res = tape.forward_backward(loss.id);
  if (!std::isfinite(res.value))
    throw ContractError("baseline step: non-finite loss");
  std::vector<double> grads = collect_param_grads(res, params, state.theta);
  if (clip_grad_norm(grads, cfg.grad_clip_norm))
    state.grad_clip_activations += 1;
  std::vector<double> flat = state.theta.flatten();
  adamw_step(flat, grads, state.opt, cfg.learning_rate, cfg.weight_decay);
  state.theta.unflatten(flat);
  return res.value;
}

}  // namespace

BaselineIterationMetrics reward_weighted_step(BaselineState& state,
                                              const TaskBinding& binding,
                                              const BaselineConfig& cfg,
                                              const TaskUniverse& u,
                                              const NoiseSchedule& sched) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Context> contexts;
  std::vector<Tensor> samples;
  std::vector<double> rewards;
  for (int p = 0; p < cfg.prompts_per_iteration; ++p) {
    Context ctx = make_prompt(binding.spec, state.rng_prompts);
    // Generation always uses the frozen base model.
    Tensor x0 = sample_ddim(state.frozen_base, u.embed(ctx),
                            cfg.num_inference_steps, cfg.guidance_scale,
                            sched, state.rng_generate);
    rewards.push_back(scalar_reward(x0, ctx, u, binding));
    contexts.push_back(std::move(ctx));
    samples.push_back(std::move(x0));
  }

  std::vector<double> weights = minmax_normalize(rewards);
  for (double& w : weights) w = std::pow(w, 1.0 / cfg.beta_rw);
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (wsum > 0.0)
    for (double& w : weights) w /= wsum;

  BaselineIterationMetrics m;
  m.iteration = state.iteration;
  m.loss = weighted_denoise_step(state, contexts, samples, weights, cfg, u,
                                 sched);
  m.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) /
                  static_cast<double>(rewards.size());
  m.divergence_flag = divergence_monitor(m.mean_reward, state.peak_reward);
  state.divergence_flagged |= m.divergence_flag;
  state.iteration += 1;
  m.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return m;
}

BaselineIterationMetrics raft_step(BaselineState& state,
                                   const TaskBinding& binding,
                                   const BaselineConfig& cfg,
                                   const TaskUniverse& u,
                                   const NoiseSchedule& sched) {
  if (cfg.raft_accept < 1 || cfg.raft_accept > cfg.raft_k)
    throw ContractError("raft_step: need 1 <= accept <= k");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Context> retained_ctx;
  std::vector<Tensor> retained_x0;
  double reward_sum = 0.0;
  int reward_count = 0;

  for (int p = 0; p < cfg.prompts_per_iteration; ++p) {
    const Context ctx = make_prompt(binding.spec, state.rng_prompts);
    const Tensor cemb = u.embed(ctx);
    std::vector<Tensor> candidates;
    std::vector<double> rewards;
    for (int s = 0; s < cfg.raft_k; ++s) {
      // Online sampling from the latest model.
      Tensor x0 = sample_ddim(state.theta, cemb, cfg.num_inference_steps,
                              cfg.guidance_scale, sched, state.rng_generate);
      rewards.push_back(scalar_reward(x0, ctx, u, binding));
      candidates.push_back(std::move(x0));
      reward_sum += rewards.back();
      ++reward_count;
    }
    std::vector<int> order(cfg.raft_k);
    std::iota(order.begin(), order.end(), 0);
    // Ties keep the lower sample index.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return rewards[a] > rewards[b];
    });
    for (int i = 0; i < cfg.raft_accept; ++i) {
      retained_ctx.push_back(ctx);
      retained_x0.push_back(candidates[order[i]]);
    }
  }

  const double w = 1.0 / static_cast<double>(retained_x0.size());
  BaselineIterationMetrics m;
  m.iteration = state.iteration;
  m.loss = weighted_denoise_step(
      state, retained_ctx, retained_x0,
      std::vector<double>(retained_x0.size(), w), cfg, u, sched);
  m.mean_reward = reward_sum / reward_count;
  m.divergence_flag = divergence_monitor(m.mean_reward, state.peak_reward);
  state.divergence_flagged |= m.divergence_flag;
  state.iteration += 1;
  m.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return m;
}

std::vector<BaselineIterationMetrics> run_baseline(
    BaselineState& state, const TaskBinding& binding,
    const BaselineConfig& cfg, const TaskUniverse& u,
    const NoiseSchedule& sched) {
  std::vector<BaselineIterationMetrics> series;
  series.reserve(cfg.max_iterations);
  for (int i = 0; i < cfg.max_iterations; ++i) {
    series.push_back(cfg.method == BaselineMethod::reward_weighted
                         ? reward_weighted_step(state, binding, cfg, u, sched)
                         : raft_step(state, binding, cfg, u, sched));
  }
  return series;
}

}  // namespace difftune
