#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "difftune/tensor.hpp"

namespace difftune {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One AdamW update. Weight decay is decoupled: params shrink by lr*wd*theta
// independently of the moment-based step.
inline void adamw_step(std::vector<double>& params,
                       const std::vector<double>& grads, AdamWState& state,
                       double lr, double wd, const AdamWConfig& cfg = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ShapeError("adamw_step: params/grads/state length mismatch (" +
                     std::to_string(params.size()) + ", " +
                     std::to_string(grads.size()) + ", " +
                     std::to_string(state.m.size()) + ")");
  }
  if (lr <= 0.0) throw ContractError("adamw_step: lr must be positive");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * wd * params[i];
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Scales grads in place so the global L2 norm is at most max_norm.
// Returns true when clipping was active.
inline bool clip_grad_norm(std::vector<double>& grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return false;
  const double s = max_norm / norm;
  for (double& g : grads) g *= s;
  return true;
}

}  // namespace difftune
