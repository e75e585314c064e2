#include "difftune/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace difftune {

const std::vector<RunConfig::KeySpec>& RunConfig::key_table() {
  static const std::vector<KeySpec> table = {
      {"seed", "0", "master seed; --seed overrides"},
      {"out", "out", "output directory"},
      {"schedule.T", "100", "diffusion steps of the training schedule"},
      {"schedule.beta_min", "1e-4", "linear schedule lower bound"},
      {"schedule.beta_max", "0.02", "linear schedule upper bound"},
      {"sampler.steps", "50", "inference sub-schedule length"},
      {"sampler.eta", "1.0", "DDIM stochasticity; > 0 required for RL"},
      {"sampler.guidance", "1.5", "classifier-free guidance scale"},
      {"model.hidden", "64,64", "hidden layer widths"},
      {"model.init_scale", "0.2", "weight init scale"},
      {"tasks.objects", "10", "object classes on the scene circle"},
      {"tasks.styles", "8", "portrait style ids (last 2 held out)"},
      {"tasks.prompts", "8", "preference prompt ids (last 2 held out)"},
      {"tasks.train_fraction", "0.8", "seen fraction of object classes"},
      {"tasks.bias_ratio", "0.85", "portrait bin-0 probability"},
      {"tasks.jitter", "0.1", "dataset Gaussian jitter"},
      {"rewards.tau", "0.5", "preference kernel width"},
      {"rewards.delta", "0.75", "preference target offset on slot 0"},
      {"data.composition", "2000", "composition pretraining samples"},
      {"data.portrait", "2000", "portrait pretraining samples"},
      {"data.preference", "2000", "preference pretraining samples"},
      {"pretrain.steps", "3000", "base-model training steps"},
      {"pretrain.batch", "64", "base-model batch size"},
      {"pretrain.lr", "1e-3", "base-model learning rate"},
      {"pretrain.dropout", "0.1", "context dropout for CFG"},
      {"rl.clip_epsilon", "1e-4", "clip range"},
      {"rl.timesteps_per_iteration", "5", "training timesteps per update"},
      {"rl.beta_pretrain", "0.1", "pretraining loss mixing weight"},
      {"rl.learning_rate", "1e-4", "RL learning rate"},
      {"rl.prompts_per_iteration", "16", "prompts per iteration"},
      {"rl.samples_per_prompt", "8", "samples (minibatch) per prompt"},
      {"rl.normalization", "per_batch", "per_batch | per_prompt"},
      {"rl.iterations", "200", "outer iterations"},
      {"rl.grad_clip", "1.0", "global gradient norm bound"},
      {"rl.pretrain_batch", "32", "pretraining minibatch during RL"},
      {"rl.checkpoint_every", "0", "checkpoint cadence; 0 = final only"},
      {"finetune.method", "rl", "rl | reward_weighted | raft"},
      {"finetune.tasks", "preference",
       "comma list of preference, fairness, composition"},
      {"baseline.beta_rw", "0.5", "reward-weighted temperature"},
      {"baseline.k", "8", "RAFT samples per prompt"},
      {"baseline.accept", "1", "RAFT retained per prompt"},
      {"baseline.learning_rate", "1e-4", "baseline learning rate"},
      {"baseline.iterations", "200", "baseline iterations"},
      {"adamw.weight_decay", "0.01", "decoupled weight decay"},
      {"eval.samples_per_prompt", "64", "evaluation samples per prompt"},
      {"eval.prompts", "16", "evaluation prompts per metric"},
      {"metrics.record_walltime", "false",
       "record wall seconds in metrics (breaks bit-exact reproducibility)"},
  };
  return table;
}

RunConfig::RunConfig() {
  for (const KeySpec& k : key_table()) values_[k.key] = k.default_value;
}

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (values_.find(key) == values_.end())
    throw ConfigError("config: unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + v +
                      "'");
  }
}

int RunConfig::get_int(const std::string& key) const {
  const double d = get_double(key);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw ConfigError("config: key '" + key + "' is not an integer");
  return i;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' is not an unsigned integer");
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean");
}

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<std::size_t> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::uint64_t n = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), n);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size() || n == 0)
      throw ConfigError("config: key '" + key + "' is not a size list");
    out.push_back(static_cast<std::size_t>(n));
  }
  if (out.empty())
    throw ConfigError("config: key '" + key + "' is empty");
  return out;
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const KeySpec& k : key_table())
    out += std::string(k.key) + " = " + values_.at(k.key) + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (const KeySpec& k : key_table()) {
    const std::string key = k.key;
    if (key == "seed" || key == "out") continue;
    const std::string line = key + "=" + values_.at(key) + "\n";
    for (unsigned char c : line) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace difftune
