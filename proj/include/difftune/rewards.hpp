#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "difftune/tasks.hpp"
#include "difftune/tensor.hpp"

namespace difftune {

inline constexpr double kAdvantageEps = 1e-8;

// Analytic stand-in for a learned preference model: a Gaussian kernel around
// the prompt's pretraining mean shifted by a fixed offset, so the base model
// is visibly suboptimal.
struct PreferenceParams {
  double tau = 0.5;
  double delta_x = 0.75;
  double delta_y = 0.75;
};

Tensor preference_target(const Context& c, const TaskUniverse& u,
                         const PreferenceParams& p);

double preference_reward(const Tensor& x0, const Context& c,
                         const TaskUniverse& u, const PreferenceParams& p);

// Mean detector confidence over the prompt's objects.
double composition_reward(const Tensor& x0, const Context& c,
                          const TaskUniverse& u);

// L2 distance between the empirical label histogram and uniform.
double statistical_parity(const std::vector<int>& labels, int n_bins);

// Distribution-level reward: every minibatch member receives the negated
// parity of the whole minibatch.
std::vector<double> diversity_reward(const std::vector<Tensor>& minibatch,
                                     const AttributeSpec& attr);

enum class NormMode { per_batch, per_prompt };

// Streaming per-prompt statistics (Welford).
struct RunningStats {
  struct Entry {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
  };
  std::unordered_map<std::uint64_t, Entry> table;

  void update(std::uint64_t key, double r);
  const Entry* find(std::uint64_t key) const;
};

struct AdvantageBatch {
  std::vector<double> adv;
  double mu = 0.0;     // per-batch statistics (per-batch mode only)
  double sigma = 0.0;
  NormMode mode = NormMode::per_batch;
};

// Per-batch: (r - mean) / sqrt(population variance + 1e-8).
// Per-prompt: updates the running table first, then normalizes each reward
// with its own prompt's statistics; prompts seen fewer than twice get
// advantage 0 (cold start).
AdvantageBatch normalize_advantages(const std::vector<double>& rewards,
                                    NormMode mode,
                                    RunningStats* stats = nullptr,
                                    const std::vector<std::uint64_t>* keys =
                                        nullptr);

}  // namespace difftune
