#include "difftune/rewards.hpp"

#include <cmath>

namespace difftune {

Tensor preference_target(const Context& c, const TaskUniverse& u,
                         const PreferenceParams& p) {
  if (c.kind != TaskKind::preference)
    throw ContractError("preference_reward: context is not a preference task");
  Tensor t = u.preference_mean(c.prompt);
  t.data[0] += p.delta_x;
  t.data[1] += p.delta_y;
  return t;
}

double preference_reward(const Tensor& x0, const Context& c,
                         const TaskUniverse& u, const PreferenceParams& p) {
  const Tensor target = preference_target(c, u, p);
  double sq = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x0.data[i] - target.data[i];
    sq += d * d;
  }
  return std::exp(-sq / (2.0 * p.tau * p.tau));
}

double composition_reward(const Tensor& x0, const Context& c,
                          const TaskUniverse& u) {
  if (c.kind != TaskKind::composition)
    throw ContractError("composition_reward: context is not a composition task");
  return 0.5 * (detect(u.objects.at(c.object_a), x0) +
                detect(u.objects.at(c.object_b), x0));
}

double statistical_parity(const std::vector<int>& labels, int n_bins) {
  if (labels.empty()) throw ContractError("statistical_parity: empty labels");
  std::vector<double> hist(n_bins, 0.0);
  for (int l : labels) {
    if (l < 0 || l >= n_bins)
      throw ContractError("statistical_parity: label out of range");
    hist[l] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  const double uniform = 1.0 / n_bins;
  double sq = 0.0;
  for (double h : hist) {
    const double d = h / n - uniform;
    sq += d * d;
  }
  return std::sqrt(sq);
}

std::vector<double> diversity_reward(const std::vector<Tensor>& minibatch,
                                     const AttributeSpec& attr) {
  if (minibatch.size() < 2)
    throw ContractError("diversity_reward: minibatch size must be >= 2");
  std::vector<int> labels;
  labels.reserve(minibatch.size());
  for (const Tensor& x : minibatch)
    labels.push_back(classify_attribute(x, attr));
  const double r = -statistical_parity(labels, attr.n_bins());
  return std::vector<double>(minibatch.size(), r);
}

void RunningStats::update(std::uint64_t key, double r) {
  Entry& e = table[key];
  e.count += 1;
  const double delta = r - e.mean;
  e.mean += delta / static_cast<double>(e.count);
  e.m2 += delta * (r - e.mean);
}

const RunningStats::Entry* RunningStats::find(std::uint64_t key) const {
  auto it = table.find(key);
  return it == table.end() ? nullptr : &it->second;
}

AdvantageBatch normalize_advantages(const std::vector<double>& rewards,
                                    NormMode mode, RunningStats* stats,
                                    const std::vector<std::uint64_t>* keys) {
  AdvantageBatch out;
  out.mode = mode;
  if (mode == NormMode::per_batch) {
    if (rewards.size() < 2)
      throw ContractError("normalize_advantages: per-batch mode needs >= 2 rewards");
    double mu = 0.0;
    for (double r : rewards) mu += r;
    mu /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mu) * (r - mu);
    var /= static_cast<double>(rewards.size());  // population variance
    const double denom = std::sqrt(var + kAdvantageEps);
    out.mu = mu;
    out.sigma = std::sqrt(var);
    out.adv.reserve(rewards.size());
    for (double r : rewards) out.adv.push_back((r - mu) / denom);
    return out;
  }

  if (!stats || !keys || keys->size() != rewards.size())
    throw ContractError("normalize_advantages: per-prompt mode needs stats and keys");
  for (std::size_t i = 0; i < rewards.size(); ++i)
    stats->update((*keys)[i], rewards[i]);
  out.adv.reserve(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const RunningStats::Entry* e = stats->find((*keys)[i]);
    if (!e || e->count < 2) {
      out.adv.push_back(0.0);  // cold start
      continue;
    }
    const double var = e->m2 / static_cast<double>(e->count);
    out.adv.push_back((rewards[i] - e->mean) / std::sqrt(var + kAdvantageEps));
  }
  return out;
}

}  // namespace difftune
