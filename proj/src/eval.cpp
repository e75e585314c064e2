#include "difftune/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "difftune/graph.hpp"
#include "difftune/io.hpp"
#include "difftune/pretrain.hpp"
#include "difftune/rl.hpp"

namespace difftune {

Tensor generate_sample(const DenoiserParams& theta, const Tensor& cemb,
                       const SamplerConfig& sampler, const NoiseSchedule& sched,
                       std::uint64_t seed) {
  if (sampler.eta > 0.0)
    return sample_trajectory(theta, cemb, sampler, sched, seed).final_sample();
  Rng rng(seed);
  return sample_ddim(theta, cemb, sampler.num_inference_steps,
                     sampler.guidance_scale, sched, rng);
}

double evaluate_parity(const DenoiserParams& theta, const TaskUniverse& u,
                       const NoiseSchedule& sched, const SamplerConfig& sampler,
                       const std::vector<int>& style_pool,
                       const EvalConfig& cfg) {
  if (style_pool.empty()) throw ContractError("evaluate_parity: empty pool");
  Rng rng(Rng::derive(cfg.seed, 21));
  double parity_sum = 0.0;
  for (int p = 0; p < cfg.n_prompts; ++p) {
    Context ctx;
    ctx.kind = TaskKind::portrait;
    ctx.style = style_pool[rng.below(style_pool.size())];
    const Tensor cemb = u.embed(ctx);
    const std::uint64_t base_seed = rng.next_u64();
    std::vector<int> labels;
    labels.reserve(cfg.samples_per_prompt);
    for (int s = 0; s < cfg.samples_per_prompt; ++s) {
      const Tensor x0 = generate_sample(theta, cemb, sampler, sched,
                                        Rng::derive(base_seed, s));
      labels.push_back(classify_attribute(x0, u.attr));
    }
    parity_sum += statistical_parity(labels, u.attr.n_bins());
  }
  return parity_sum / cfg.n_prompts;
}

namespace {

double detection_for_pool(const DenoiserParams& theta, const TaskUniverse& u,
                          const NoiseSchedule& sched,
                          const SamplerConfig& sampler,
                          const std::vector<int>& pool, const EvalConfig& cfg,
                          std::uint64_t stream) {
  TaskSpec spec;
  spec.kind = TaskKind::composition;
  spec.object_pool = pool;
  Rng rng(Rng::derive(cfg.seed, stream));
  double sum = 0.0;
  int count = 0;
  for (int p = 0; p < cfg.n_prompts; ++p) {
    const Context ctx = make_prompt(spec, rng);
    const Tensor cemb = u.embed(ctx);
    const std::uint64_t base_seed = rng.next_u64();
    for (int s = 0; s < cfg.samples_per_prompt; ++s) {
      const Tensor x0 = generate_sample(theta, cemb, sampler, sched,
                                        Rng::derive(base_seed, s));
      sum += composition_reward(x0, ctx, u);
      ++count;
    }
  }
  return sum / count;
}

}  // namespace

DetectionScores evaluate_detection(const DenoiserParams& theta,
                                   const TaskUniverse& u,
                                   const NoiseSchedule& sched,
                                   const SamplerConfig& sampler,
                                   const std::vector<int>& seen_pool,
                                   const std::vector<int>& unseen_pool,
                                   const EvalConfig& cfg) {
  DetectionScores s;
  s.seen = detection_for_pool(theta, u, sched, sampler, seen_pool, cfg, 22);
  s.unseen =
      detection_for_pool(theta, u, sched, sampler, unseen_pool, cfg, 23);
  return s;
}

double evaluate_preference(const DenoiserParams& theta, const TaskUniverse& u,
                           const NoiseSchedule& sched,
                           const SamplerConfig& sampler,
                           const std::vector<int>& prompt_pool,
                           const PreferenceParams& pref,
                           const EvalConfig& cfg) {
  if (prompt_pool.empty())
    throw ContractError("evaluate_preference: empty pool");
  Rng rng(Rng::derive(cfg.seed, 24));
  double sum = 0.0;
  int count = 0;
  for (int p = 0; p < cfg.n_prompts; ++p) {
    Context ctx;
    ctx.kind = TaskKind::preference;
    ctx.prompt = prompt_pool[rng.below(prompt_pool.size())];
    const Tensor cemb = u.embed(ctx);
    const std::uint64_t base_seed = rng.next_u64();
    for (int s = 0; s < cfg.samples_per_prompt; ++s) {
      const Tensor x0 = generate_sample(theta, cemb, sampler, sched,
                                        Rng::derive(base_seed, s));
      sum += preference_reward(x0, ctx, u, pref);
      ++count;
    }
  }
  return sum / count;
}

double evaluate_pretrain_loss(const DenoiserParams& theta,
                              const TaskUniverse& u, const NoiseSchedule& sched,
                              const PretrainSpec& data_spec,
                              std::uint64_t seed, int n_batch) {
  PretrainSpec holdout = data_spec;
  const int per_kind = std::max(1, n_batch / 3);
  holdout.n_composition = per_kind;
  holdout.n_portrait = per_kind;
  holdout.n_preference = per_kind;
  Rng rng(Rng::derive(seed, 25));
  const std::vector<SceneSample> data = gen_pretrain_dataset(u, holdout, rng);
  const std::vector<PretrainExample> batch = to_pretrain_examples(data, u);

  Tape tape;
  const std::vector<Var> params = lift_params(tape, theta);
  Rng noise_rng(Rng::derive(seed, 26));
  const Var loss = pretraining_loss(tape, params, theta.spec, batch, sched,
                                    0.0, noise_rng);
  return loss.val().data[0];
}

std::map<std::string, RelativeScore> evaluate_relative(
    const MetricMap& joint, const MetricMap& specialist,
    const MetricMap& base) {
  auto keys_of = [](const MetricMap& m) {
    std::string k;
    for (const auto& [key, _] : m) k += key + ",";
    return k;
  };
  if (keys_of(joint) != keys_of(specialist) ||
      keys_of(joint) != keys_of(base)) {
    throw ContractError("evaluate_relative: metric sets differ (" +
                        keys_of(joint) + " vs " + keys_of(specialist) +
                        " vs " + keys_of(base) + ")");
  }
  std::map<std::string, RelativeScore> out;
  for (const auto& [key, jv] : joint) {
    const double sv = specialist.at(key);
    const double bv = base.at(key);
    RelativeScore rs;
    if (sv == bv) {
      rs.applicable = false;  // specialist gained nothing; ratio undefined
    } else if (key == "parity") {
      rs.applicable = true;
      rs.value = (bv - jv) / (bv - sv);  // lower is better
    } else {
      rs.applicable = true;
      rs.value = (jv - bv) / (sv - bv);
    }
    out[key] = rs;
  }
  return out;
}

void save_metric_map(const std::string& path, const MetricMap& m) {
  std::string text;
  for (const auto& [key, value] : m)
    text += key + " = " + format_double(value) + "\n";
  write_text_atomic(path, text);
}

MetricMap load_metric_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metric file " + path);
  MetricMap m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("bad metric line in " + path + ": " + line);
    std::string key = line.substr(0, eq);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    m[key] = std::stod(line.substr(eq + 1));
  }
  return m;
}

}  // namespace difftune
