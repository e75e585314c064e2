#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "difftune/tensor.hpp"

namespace difftune {

// Linear DDPM variance schedule. beta/alpha/alpha_bar are indexed by
// timestep t in [1, T]; alpha_bar(0) == 1 by convention.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t-1] = beta_t
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // running product of alpha

  double beta_at(int t) const {
    check_range(t, 1);
    return beta[t - 1];
  }

  double alpha_bar_at(int t) const {
    check_range(t, 0);
    return t == 0 ? 1.0 : alpha_bar[t - 1];
  }

 private:
  void check_range(int t, int lo) const {
    if (t < lo || t > T)
      throw ContractError("NoiseSchedule: timestep " + std::to_string(t) +
                          " outside [" + std::to_string(lo) + ", " +
                          std::to_string(T) + "]");
  }
};

inline NoiseSchedule build_schedule(int T, double beta_min, double beta_max) {
  if (T < 2 || beta_min <= 0.0 || beta_min > beta_max || beta_max >= 1.0) {
    throw ContractError("build_schedule: need T >= 2 and 0 < beta_min <= "
                        "beta_max < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.beta[i] = beta_min + (beta_max - beta_min) * i / (T - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

// Closed-form forward marginal x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps,
                            const NoiseSchedule& s) {
  require_same_shape(x0, eps, "forward_noise");
  const double abar = s.alpha_bar_at(t);
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  Tensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

}  // namespace difftune
