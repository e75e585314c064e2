#include "difftune/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "difftune/baselines.hpp"
#include "difftune/config.hpp"
#include "difftune/eval.hpp"
#include "difftune/io.hpp"
#include "difftune/rl.hpp"

namespace difftune {

namespace {

namespace fs = std::filesystem;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CommonOpts {
  std::string config_path;
  std::string seed_override;  // empty = use the config value
  std::string out_dir;
};

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty()
                      ? RunConfig()
                      : RunConfig::from_file(opts.config_path);
  if (!opts.seed_override.empty()) cfg.set("seed", opts.seed_override);
  if (!opts.out_dir.empty()) cfg.set("out", opts.out_dir);
  // Validates the override before any work happens.
  cfg.get_u64("seed");
  return cfg;
}

std::string prepare_out_dir(const RunConfig& cfg) {
  const std::string out = cfg.get("out");
  fs::create_directories(out);
  write_text_atomic(out + "/resolved.cfg", cfg.resolved_text());
  return out;
}

TaskUniverse build_universe(const RunConfig& cfg) {
  return TaskUniverse::make_default(cfg.get_int("tasks.objects"),
                                    cfg.get_int("tasks.styles"),
                                    cfg.get_int("tasks.prompts"));
}

NoiseSchedule build_sched(const RunConfig& cfg) {
  return build_schedule(cfg.get_int("schedule.T"),
                        cfg.get_double("schedule.beta_min"),
                        cfg.get_double("schedule.beta_max"));
}

SamplerConfig build_sampler(const RunConfig& cfg) {
  SamplerConfig s;
  s.num_inference_steps = cfg.get_int("sampler.steps");
  s.eta = cfg.get_double("sampler.eta");
  s.guidance_scale = cfg.get_double("sampler.guidance");
  return s;
}

PretrainSpec build_data_spec(const RunConfig& cfg) {
  PretrainSpec spec;
  spec.n_composition = cfg.get_int("data.composition");
  spec.n_portrait = cfg.get_int("data.portrait");
  spec.n_preference = cfg.get_int("data.preference");
  spec.bias_ratio = cfg.get_double("tasks.bias_ratio");
  spec.jitter = cfg.get_double("tasks.jitter");
  return spec;
}

PreferenceParams build_pref(const RunConfig& cfg) {
  PreferenceParams p;
  p.tau = cfg.get_double("rewards.tau");
  p.delta_x = cfg.get_double("rewards.delta");
  p.delta_y = cfg.get_double("rewards.delta");
  return p;
}

// Held-out pools: object classes split by seed, the last two styles and the
// last two prompt ids reserved for evaluation.
struct Pools {
  std::vector<int> seen_objects, unseen_objects;
  std::vector<int> train_styles, heldout_styles;
  std::vector<int> train_prompts, heldout_prompts;
};

Pools build_pools(const RunConfig& cfg, const TaskUniverse& u) {
  Pools p;
  Rng split_rng(Rng::derive(cfg.get_u64("seed"), 99));
  std::tie(p.seen_objects, p.unseen_objects) =
      split_objects(static_cast<int>(u.objects.size()),
                    cfg.get_double("tasks.train_fraction"), split_rng);
  const int held_styles = std::min(2, u.n_styles - 1);
  for (int i = 0; i < u.n_styles; ++i)
    (i < u.n_styles - held_styles ? p.train_styles : p.heldout_styles)
        .push_back(i);
  const int held_prompts = std::min(2, u.n_prompts - 1);
  for (int i = 0; i < u.n_prompts; ++i)
    (i < u.n_prompts - held_prompts ? p.train_prompts : p.heldout_prompts)
        .push_back(i);
  return p;
}

TaskBinding make_binding(const std::string& name, const RunConfig& cfg,
                         const Pools& pools) {
  TaskBinding b;
  b.name = name;
  if (name == "preference") {
    b.spec.kind = TaskKind::preference;
    b.spec.prompt_pool = pools.train_prompts;
    b.reward = TaskBinding::Reward::preference;
    b.pref = build_pref(cfg);
  } else if (name == "fairness") {
    b.spec.kind = TaskKind::portrait;
    b.spec.style_pool = pools.train_styles;
    b.reward = TaskBinding::Reward::diversity;
  } else if (name == "composition") {
    b.spec.kind = TaskKind::composition;
    b.spec.object_pool = pools.seen_objects;
    b.reward = TaskBinding::Reward::composition;
  } else {
    throw ConfigError("unknown task '" + name +
                      "' (expected preference, fairness or composition)");
  }
  return b;
}

std::vector<TaskBinding> make_bindings(const RunConfig& cfg,
                                       const Pools& pools) {
  std::vector<TaskBinding> out;
  std::istringstream ss(cfg.get("finetune.tasks"));
  std::string name;
  while (std::getline(ss, name, ',')) {
    name.erase(std::remove(name.begin(), name.end(), ' '), name.end());
    if (!name.empty()) out.push_back(make_binding(name, cfg, pools));
  }
  if (out.empty()) throw ConfigError("finetune.tasks resolved to no tasks");
  return out;
}

MlpSpec build_mlp_spec(const RunConfig& cfg, const TaskUniverse& u) {
  MlpSpec spec;
  spec.sample_dim = u.sample_dim();
  spec.context_dim = u.context_dim();
  spec.hidden = cfg.get_size_list("model.hidden");
  return spec;
}

TrainConfig build_train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.clip_epsilon = cfg.get_double("rl.clip_epsilon");
  t.timesteps_per_iteration = cfg.get_int("rl.timesteps_per_iteration");
  t.beta_pretrain = cfg.get_double("rl.beta_pretrain");
  t.learning_rate = cfg.get_double("rl.learning_rate");
  t.prompts_per_iteration = cfg.get_int("rl.prompts_per_iteration");
  t.samples_per_prompt = cfg.get_int("rl.samples_per_prompt");
  const std::string norm = cfg.get("rl.normalization");
  if (norm == "per_batch") {
    t.normalization = NormMode::per_batch;
  } else if (norm == "per_prompt") {
    t.normalization = NormMode::per_prompt;
  } else {
    throw ConfigError("rl.normalization must be per_batch or per_prompt");
  }
  t.max_iterations = cfg.get_int("rl.iterations");
  t.seed = cfg.get_u64("seed");
  t.weight_decay = cfg.get_double("adamw.weight_decay");
  t.grad_clip_norm = cfg.get_double("rl.grad_clip");
  t.pretrain_batch = cfg.get_int("rl.pretrain_batch");
  t.context_dropout = cfg.get_double("pretrain.dropout");
  t.checkpoint_every = cfg.get_int("rl.checkpoint_every");
  return t;
}

Checkpoint to_checkpoint(const TrainerState& st, std::uint64_t config_hash) {
  Checkpoint ck;
  ck.spec = st.theta.spec;
  ck.theta = st.theta.flatten();
  ck.theta_old = st.theta_old.flatten();
  ck.opt = st.opt;
  ck.iteration = st.iteration;
  ck.rng_states = {st.rng_sampling.serialize(), st.rng_timesteps.serialize(),
                   st.rng_pretrain.serialize()};
  ck.config_hash = config_hash;
  return ck;
}

DenoiserParams params_from_checkpoint(const Checkpoint& ck) {
  DenoiserParams p;
  p.spec = ck.spec;
  // Rebuild tensor shapes, then fill from the flat array.
  Rng dummy(0);
  p = DenoiserParams::init(ck.spec, dummy);
  p.unflatten(ck.theta);
  return p;
}

void check_config_hash(const Checkpoint& ck, const RunConfig& cfg,
                       bool allow_mismatch) {
  if (ck.config_hash != cfg.hash() && !allow_mismatch) {
    throw ConfigError(
        "checkpoint config hash does not match the current config; pass "
        "--allow-config-mismatch to proceed anyway");
  }
}

double walltime(const RunConfig& cfg, double measured) {
  return cfg.get_bool("metrics.record_walltime") ? measured : 0.0;
}

int cmd_gen_data(const CommonOpts& opts) {
  const RunConfig cfg = load_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const TaskUniverse u = build_universe(cfg);
  const PretrainSpec spec = build_data_spec(cfg);
  Rng rng(Rng::derive(cfg.get_u64("seed"), 50));
  const std::vector<SceneSample> data = gen_pretrain_dataset(u, spec, rng);
  std::string meta =
      "difftune pretraining dataset\n"
      "samples = " + std::to_string(data.size()) + "\n" +
      "composition = " + std::to_string(spec.n_composition) + "\n" +
      "portrait = " + std::to_string(spec.n_portrait) + "\n" +
      "preference = " + std::to_string(spec.n_preference) + "\n" +
      "bias_ratio = " + format_double(spec.bias_ratio) + "\n" +
      "jitter = " + format_double(spec.jitter) + "\n" +
      "seed = " + cfg.get("seed") + "\n";
  save_dataset(out + "/dataset.bin", data, meta);
  std::cout << "wrote " << data.size() << " samples to " << out
            << "/dataset.bin\n";
  return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data_path) {
  const RunConfig cfg = load_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const TaskUniverse u = build_universe(cfg);
  const NoiseSchedule sched = build_sched(cfg);
  const std::string data_file =
      data_path.empty() ? out + "/dataset.bin" : data_path;
  const std::vector<SceneSample> data = load_dataset(data_file);
  const std::vector<PretrainExample> examples = to_pretrain_examples(data, u);

  const std::uint64_t seed = cfg.get_u64("seed");
  Rng init_rng(Rng::derive(seed, 60));
  DenoiserParams theta = DenoiserParams::init(
      build_mlp_spec(cfg, u), init_rng, cfg.get_double("model.init_scale"));
  AdamWState opt(theta.param_count());
  Rng batch_rng(Rng::derive(seed, 61));

  const int steps = cfg.get_int("pretrain.steps");
  const int batch_size = cfg.get_int("pretrain.batch");
  const double lr = cfg.get_double("pretrain.lr");
  const double wd = cfg.get_double("adamw.weight_decay");
  const double dropout = cfg.get_double("pretrain.dropout");

  for (int step = 0; step < steps; ++step) {
    std::vector<PretrainExample> batch;
    batch.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i)
      batch.push_back(examples[batch_rng.below(examples.size())]);
    Tape tape;
    const std::vector<Var> params = lift_params(tape, theta);
    const Var loss = pretraining_loss(tape, params, theta.spec, batch, sched,
                                      dropout, batch_rng);
    const Tape::BackwardResult res = tape.forward_backward(loss.id);
    std::vector<double> grads = collect_param_grads(res, params, theta);
    std::vector<double> flat = theta.flatten();
    adamw_step(flat, grads, opt, lr, wd);
    theta.unflatten(flat);
    if (step % 500 == 0 || step + 1 == steps)
      std::cout << "pretrain step " << step << " loss "
                << format_double(res.value) << "\n";
  }

  Checkpoint ck;
  ck.spec = theta.spec;
  ck.theta = theta.flatten();
  ck.theta_old = ck.theta;
  ck.opt = AdamWState(theta.param_count());
  ck.iteration = 0;
  ck.rng_states = {Rng(0).serialize(), Rng(0).serialize(), Rng(0).serialize()};
  ck.config_hash = cfg.hash();
  save_checkpoint(out + "/base.ckpt", ck);
  std::cout << "wrote " << out << "/base.ckpt\n";
  return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& base_path,
                 const std::string& data_path, bool allow_mismatch,
                 bool resume) {
  const RunConfig cfg = load_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const TaskUniverse u = build_universe(cfg);
  const NoiseSchedule sched = build_sched(cfg);
  const SamplerConfig sampler = build_sampler(cfg);
  const Pools pools = build_pools(cfg, u);

  const std::string base_file = base_path.empty() ? out + "/base.ckpt"
                                                  : base_path;
  const Checkpoint base_ck = load_checkpoint(base_file);
  check_config_hash(base_ck, cfg, allow_mismatch);
  const DenoiserParams base = params_from_checkpoint(base_ck);

  const std::string method = cfg.get("finetune.method");
  MetricsWriter metrics(out + "/metrics.csv");

  if (method == "rl") {
    const TrainConfig tcfg = build_train_config(cfg);
    const std::vector<TaskBinding> tasks = make_bindings(cfg, pools);
    std::vector<PretrainExample> pretrain;
    if (tcfg.beta_pretrain > 0.0) {
      const std::string data_file =
          data_path.empty() ? out + "/dataset.bin" : data_path;
      pretrain = to_pretrain_examples(load_dataset(data_file), u);
    }
    TrainerState state = make_trainer_state(base, tcfg);
    if (resume) {
      state.theta.unflatten(base_ck.theta);
      state.theta_old.unflatten(base_ck.theta_old);
      state.opt = base_ck.opt;
      state.iteration = base_ck.iteration;
      if (base_ck.rng_states.size() == 3) {
        state.rng_sampling.deserialize(base_ck.rng_states[0]);
        state.rng_timesteps.deserialize(base_ck.rng_states[1]);
        state.rng_pretrain.deserialize(base_ck.rng_states[2]);
      }
    }
    const auto on_iter = [&](const TrainerState& st,
                             const IterationMetrics& m) {
      for (const TaskMetrics& tm : m.tasks) {
        metrics.append(m.iteration, tm.task, tm.mean_reward, tm.loss_ppo,
                       m.loss_pretrain, tm.statistical_parity, kNaN, kNaN,
                       walltime(cfg, m.wall_seconds));
      }
      if (tcfg.checkpoint_every > 0 &&
          st.iteration % static_cast<std::uint64_t>(tcfg.checkpoint_every) ==
              0) {
        save_checkpoint(out + "/iter_" + std::to_string(st.iteration) +
                            ".ckpt",
                        to_checkpoint(st, cfg.hash()));
      }
    };
    train(state, tasks, pretrain, tcfg, u, sched, sampler, on_iter);
    save_checkpoint(out + "/final.ckpt", to_checkpoint(state, cfg.hash()));
    std::cout << "wrote " << out << "/final.ckpt and " << out
              << "/metrics.csv\n";
    return 0;
  }

  if (method != "reward_weighted" && method != "raft")
    throw ConfigError("finetune.method must be rl, reward_weighted or raft");

  const std::vector<TaskBinding> tasks = make_bindings(cfg, pools);
  if (tasks.size() != 1)
    throw ConfigError("baseline methods fine-tune a single task");
  BaselineConfig bcfg;
  bcfg.method = method == "raft" ? BaselineMethod::raft
                                 : BaselineMethod::reward_weighted;
  bcfg.beta_rw = cfg.get_double("baseline.beta_rw");
  bcfg.raft_k = cfg.get_int("baseline.k");
  bcfg.raft_accept = cfg.get_int("baseline.accept");
  bcfg.learning_rate = cfg.get_double("baseline.learning_rate");
  bcfg.prompts_per_iteration = cfg.get_int("rl.prompts_per_iteration");
  bcfg.num_inference_steps = cfg.get_int("sampler.steps");
  bcfg.guidance_scale = cfg.get_double("sampler.guidance");
  bcfg.max_iterations = cfg.get_int("baseline.iterations");
  bcfg.seed = cfg.get_u64("seed");
  bcfg.weight_decay = cfg.get_double("adamw.weight_decay");
  bcfg.grad_clip_norm = cfg.get_double("rl.grad_clip");

  BaselineState state = make_baseline_state(base, bcfg);
  for (int i = 0; i < bcfg.max_iterations; ++i) {
    const BaselineIterationMetrics m =
        bcfg.method == BaselineMethod::reward_weighted
            ? reward_weighted_step(state, tasks[0], bcfg, u, sched)
            : raft_step(state, tasks[0], bcfg, u, sched);
    metrics.append(m.iteration, tasks[0].name, m.mean_reward, kNaN, m.loss,
                   kNaN, kNaN, kNaN, walltime(cfg, m.wall_seconds));
    if (m.divergence_flag)
      std::cout << "divergence monitor: iteration " << m.iteration
                << " mean reward below half of its running peak\n";
  }
  Checkpoint ck;
  ck.spec = state.theta.spec;
  ck.theta = state.theta.flatten();
  ck.theta_old = ck.theta;
  ck.opt = state.opt;
  ck.iteration = state.iteration;
  ck.rng_states = {state.rng_prompts.serialize(),
                   state.rng_generate.serialize(), state.rng_train.serialize()};
  ck.config_hash = cfg.hash();
  save_checkpoint(out + "/final.ckpt", ck);
  write_text_atomic(out + "/summary.txt",
                    std::string("divergence_flagged = ") +
                        (state.divergence_flagged ? "true" : "false") + "\n");
  std::cout << "wrote " << out << "/final.ckpt and " << out
            << "/metrics.csv\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& ckpt_path,
                 const std::string& out_file) {
  const RunConfig cfg = load_config(opts);
  const std::string out = prepare_out_dir(cfg);
  const TaskUniverse u = build_universe(cfg);
  const NoiseSchedule sched = build_sched(cfg);
  const SamplerConfig sampler = build_sampler(cfg);
  const Pools pools = build_pools(cfg, u);

  const Checkpoint ck = load_checkpoint(ckpt_path);
  const DenoiserParams theta = params_from_checkpoint(ck);

  EvalConfig ecfg;
  ecfg.samples_per_prompt = cfg.get_int("eval.samples_per_prompt");
  ecfg.n_prompts = cfg.get_int("eval.prompts");
  ecfg.seed = cfg.get_u64("seed");

  MetricMap m;
  m["preference"] = evaluate_preference(theta, u, sched, sampler,
                                        pools.heldout_prompts,
                                        build_pref(cfg), ecfg);
  m["parity"] =
      evaluate_parity(theta, u, sched, sampler, pools.heldout_styles, ecfg);
  const DetectionScores det = evaluate_detection(
      theta, u, sched, sampler, pools.seen_objects, pools.unseen_objects, ecfg);
  m["detection_seen"] = det.seen;
  m["detection_unseen"] = det.unseen;
  m["pretrain_loss"] = evaluate_pretrain_loss(theta, u, sched,
                                              build_data_spec(cfg), ecfg.seed);

  const std::string path = out_file.empty() ? out + "/eval.txt" : out_file;
  save_metric_map(path, m);
  for (const auto& [key, value] : m)
    std::cout << key << " = " << format_double(value) << "\n";
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& files, bool relative) {
  if (files.empty()) throw ConfigError("compare: no input files");
  std::vector<MetricMap> maps;
  for (const std::string& f : files) maps.push_back(load_metric_map(f));
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].size() != maps[0].size())
      throw ConfigError("compare: metric sets differ between " + files[0] +
                        " and " + files[i]);
    for (const auto& [key, _] : maps[0])
      if (!maps[i].count(key))
        throw ConfigError("compare: " + files[i] + " is missing metric " +
                          key);
  }

  if (relative) {
    if (files.size() != 3)
      throw ConfigError("compare --relative expects base, specialist, joint");
    const auto rel = evaluate_relative(maps[2], maps[1], maps[0]);
    for (const auto& [key, rs] : rel) {
      std::cout << key << "\t"
                << (rs.applicable ? format_double(rs.value) : "n/a") << "\n";
    }
    return 0;
  }

  std::cout << "checkpoint";
  for (const auto& [key, _] : maps[0]) std::cout << "\t" << key;
  std::cout << "\n";
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::cout << files[i];
    for (const auto& [key, _] : maps[0])
      std::cout << "\t" << format_double(maps[i].at(key));
    std::cout << "\n";
  }
  return 0;
}

int cmd_plot(const std::string& metrics_path, const std::string& out_file) {
  std::ifstream in(metrics_path);
  if (!in) throw IoError("cannot open " + metrics_path);
  std::string line;
  if (!std::getline(in, line) ||
      line != std::string(MetricsWriter::header()))
    throw IoError(metrics_path + ": unexpected CSV header");

  struct Point {
    double x, y;
  };
  std::map<std::string, std::vector<Point>> series;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string iter, task, reward;
    std::getline(ss, iter, ',');
    std::getline(ss, task, ',');
    std::getline(ss, reward, ',');
    const double y = std::stod(reward);
    if (std::isfinite(y)) series[task].push_back({std::stod(iter), y});
  }
  if (series.empty()) throw IoError(metrics_path + ": no plottable rows");

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [_, pts] : series) {
    for (const Point& p : pts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  const double w = 640, h = 400, pad = 50;
  auto sx = [&](double x) {
    return pad + (x - xmin) / (xmax - xmin) * (w - 2 * pad);
  };
  auto sy = [&](double y) {
    return h - pad - (y - ymin) / (ymax - ymin) * (h - 2 * pad);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
      << "' height='" << h << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << w / 2
      << "' y='20' text-anchor='middle' font-size='14'>mean reward per "
         "task</text>\n";
  int idx = 0;
  for (const auto& [task, pts] : series) {
    const char* color = colors[idx % 4];
    svg << "<polyline fill='none' stroke='" << color << "' points='";
    for (const Point& p : pts) svg << sx(p.x) << "," << sy(p.y) << " ";
    svg << "'/>\n<text x='" << w - pad + 4 << "' y='"
        << 40 + 16 * idx << "' font-size='12' fill='" << color << "'>" << task
        << "</text>\n";
    ++idx;
  }
  svg << "<line x1='" << pad << "' y1='" << h - pad << "' x2='" << w - pad
      << "' y2='" << h - pad << "' stroke='black'/>\n"
      << "<line x1='" << pad << "' y1='" << pad << "' x2='" << pad << "' y2='"
      << h - pad << "' stroke='black'/>\n"
      << "<text x='" << pad << "' y='" << h - pad + 16 << "' font-size='11'>"
      << format_double(xmin) << "</text>\n"
      << "<text x='" << w - pad << "' y='" << h - pad + 16
      << "' text-anchor='end' font-size='11'>" << format_double(xmax)
      << "</text>\n"
      << "<text x='" << pad - 4 << "' y='" << h - pad
      << "' text-anchor='end' font-size='11'>" << format_double(ymin)
      << "</text>\n"
      << "<text x='" << pad - 4 << "' y='" << pad
      << "' text-anchor='end' font-size='11'>" << format_double(ymax)
      << "</text>\n</svg>\n";
  write_text_atomic(out_file, svg.str());
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"difftune: RL fine-tuning of a toy diffusion model"};
  app.require_subcommand(1);

  CommonOpts common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "config file path");
    sub->add_option("--seed", common.seed_override, "seed override");
    sub->add_option("--out", common.out_dir, "output directory override");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen);

  auto* pre = app.add_subcommand("pretrain", "train the base diffusion model");
  add_common(pre);
  std::string data_path;
  pre->add_option("--data", data_path, "dataset file (default OUT/dataset.bin)");

  auto* fin = app.add_subcommand("finetune", "RL or baseline fine-tuning");
  add_common(fin);
  std::string base_path, fin_data_path;
  bool allow_mismatch = false, resume = false;
  fin->add_option("--base", base_path, "base checkpoint (default OUT/base.ckpt)");
  fin->add_option("--data", fin_data_path,
                  "pretraining dataset for the mixed loss");
  fin->add_flag("--allow-config-mismatch", allow_mismatch,
                "proceed despite a config hash mismatch");
  fin->add_flag("--resume", resume, "resume trainer state from --base");

  auto* ev = app.add_subcommand("evaluate", "metric suite on a checkpoint");
  add_common(ev);
  std::string ckpt_path, eval_out;
  ev->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")
      ->required();
  ev->add_option("--out-file", eval_out, "report path (default OUT/eval.txt)");

  auto* cmp = app.add_subcommand("compare",
                                 "side-by-side table of evaluate outputs");
  std::vector<std::string> cmp_files;
  bool cmp_relative = false;
  cmp->add_option("files", cmp_files, "evaluate output files")->required();
  cmp->add_flag("--relative", cmp_relative,
                "treat inputs as base, specialist, joint and print relative "
                "scores");

  auto* plt = app.add_subcommand("plot", "SVG chart of mean reward per task");
  std::string plot_metrics, plot_out = "metrics.svg";
  plt->add_option("--metrics", plot_metrics, "metrics CSV")->required();
  plt->add_option("--out-file", plot_out, "SVG output path");

  try {
    app.parse(argc, argv);
    if (*gen) return cmd_gen_data(common);
    if (*pre) return cmd_pretrain(common, data_path);
    if (*fin)
      return cmd_finetune(common, base_path, fin_data_path, allow_mismatch,
                          resume);
    if (*ev) return cmd_evaluate(common, ckpt_path, eval_out);
    if (*cmp) return cmd_compare(cmp_files, cmp_relative);
    if (*plt) return cmd_plot(plot_metrics, plot_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace difftune
