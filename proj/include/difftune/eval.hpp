#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "difftune/mlp.hpp"
#include "difftune/rewards.hpp"
#include "difftune/sampler.hpp"
#include "difftune/tasks.hpp"

namespace difftune {

struct EvalConfig {
  int samples_per_prompt = 64;
  int n_prompts = 16;
  std::uint64_t seed = 0;
};

// Generates one sample under the given sampler settings (stochastic when
// eta > 0, plain DDIM otherwise).
Tensor generate_sample(const DenoiserParams& theta, const Tensor& cemb,
                       const SamplerConfig& sampler, const NoiseSchedule& sched,
                       std::uint64_t seed);

// Mean over prompts of the per-prompt statistical parity of generated
// attribute labels. Prompts draw styles from the given pool.
double evaluate_parity(const DenoiserParams& theta, const TaskUniverse& u,
                       const NoiseSchedule& sched, const SamplerConfig& sampler,
                       const std::vector<int>& style_pool,
                       const EvalConfig& cfg);

// Mean composition reward over generated samples, per object split.
struct DetectionScores {
  double seen = 0.0;
  double unseen = 0.0;
};
DetectionScores evaluate_detection(const DenoiserParams& theta,
                                   const TaskUniverse& u,
                                   const NoiseSchedule& sched,
                                   const SamplerConfig& sampler,
                                   const std::vector<int>& seen_pool,
                                   const std::vector<int>& unseen_pool,
                                   const EvalConfig& cfg);

// Mean preference reward over held-out prompt ids.
double evaluate_preference(const DenoiserParams& theta, const TaskUniverse& u,
                           const NoiseSchedule& sched,
                           const SamplerConfig& sampler,
                           const std::vector<int>& prompt_pool,
                           const PreferenceParams& pref, const EvalConfig& cfg);

// Held-out denoising loss on freshly generated data; the over-optimization
// drift measure.
double evaluate_pretrain_loss(const DenoiserParams& theta,
                              const TaskUniverse& u, const NoiseSchedule& sched,
                              const PretrainSpec& data_spec,
                              std::uint64_t seed, int n_batch = 256);

using MetricMap = std::map<std::string, double>;

struct RelativeScore {
  double value = 0.0;
  bool applicable = false;
};

// Relative performance of a jointly trained model against per-task
// specialists, Table-6 style. "parity" is lower-better; everything else is
// higher-better. specialist == base makes the score not-applicable.
std::map<std::string, RelativeScore> evaluate_relative(
    const MetricMap& joint, const MetricMap& specialist, const MetricMap& base);

// key = value report files consumed by the compare subcommand.
void save_metric_map(const std::string& path, const MetricMap& m);
MetricMap load_metric_map(const std::string& path);

}  // namespace difftune
