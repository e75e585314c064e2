#include <doctest.h>

#include <cmath>

#include "difftune/mlp.hpp"
#include "difftune/rng.hpp"
#include "difftune/sampler.hpp"
#include "difftune/schedule.hpp"

using namespace difftune;

TEST_CASE("linear schedule with hand-computed alpha_bar") {
  const NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  CHECK(s.beta_at(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.beta_at(2) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar_at(2) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK_THROWS_AS(s.alpha_bar_at(3), ContractError);
  CHECK_THROWS_AS(s.beta_at(0), ContractError);
  CHECK_THROWS_AS(build_schedule(1, 0.1, 0.2), ContractError);
  CHECK_THROWS_AS(build_schedule(10, 0.2, 0.1), ContractError);
}

TEST_CASE("forward marginal moments over 1e5 draws") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const int t = 50;
  const double abar = s.alpha_bar_at(t);
  const Tensor x0 = Tensor::vec({1.0, -0.5, 0.25, 2.0});
  Rng rng(123);
  const int n = 100000;
  std::vector<double> mean(4, 0.0), m2(4, 0.0);
  for (int i = 0; i < n; ++i) {
    const Tensor xt = forward_noise(x0, t, rng.gaussian_vec(4), s);
    for (int d = 0; d < 4; ++d) {
      const double delta = xt.data[d] - mean[d];
      mean[d] += delta / (i + 1);
      m2[d] += delta * (xt.data[d] - mean[d]);
    }
  }
  const double want_var = 1.0 - abar;
  const double se_mean = std::sqrt(want_var / n);
  const double se_var = want_var * std::sqrt(2.0 / n);
  for (int d = 0; d < 4; ++d) {
    CHECK(std::abs(mean[d] - std::sqrt(abar) * x0.data[d]) < 3 * se_mean);
    CHECK(std::abs(m2[d] / n - want_var) < 3 * se_var);
  }
}

TEST_CASE("reverse variance hand value") {
  NoiseSchedule s;
  s.T = 2;
  s.beta = {0.2, 0.375};
  s.alpha = {0.8, 0.625};
  s.alpha_bar = {0.8, 0.5};  // abar(1) = 0.8, abar(2) = 0.5
  // eta=1: ((1 - 0.8) / (1 - 0.5)) * (1 - 0.5/0.8) = 0.4 * 0.375 = 0.15
  CHECK(reverse_variance(s, 2, 1, 1.0) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(reverse_variance(s, 2, 1, 0.5) ==
        doctest::Approx(0.0375).epsilon(1e-15));
  CHECK(reverse_variance(s, 2, 1, 0.0) == 0.0);
}

TEST_CASE("eta = 1 variance equals the DDPM posterior variance") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  for (int t = 2; t <= s.T; ++t) {
    const double var = reverse_variance(s, t, t - 1, 1.0);
    const double beta_tilde = (1.0 - s.alpha_bar_at(t - 1)) /
                              (1.0 - s.alpha_bar_at(t)) * s.beta_at(t);
    CHECK(std::abs(var - beta_tilde) < 1e-12);
  }
}

TEST_CASE("final transition keeps positive variance via the alpha_bar(1) map") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  CHECK(reverse_alpha_bar(s, 0) == s.alpha_bar_at(1));
  // 2 -> 0 is the last hop of the 50-step sub-schedule over T = 100.
  CHECK(reverse_variance(s, 2, 0, 1.0) > 0.0);
}

TEST_CASE("perfect noise prediction inverts the forward marginal at eta = 0") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const Tensor x0 = Tensor::vec({0.4, -1.2, 2.0, 0.0});
  Rng rng(5);
  const Tensor eps = rng.gaussian_vec(4);
  const int t = 60, t_prev = 40;
  const Tensor xt = forward_noise(x0, t, eps, s);
  const StepParams sp = reverse_step_params(eps, xt, t, t_prev, s, 0.0);
  CHECK(sp.stddev == 0.0);
  const double abar_p = s.alpha_bar_at(t_prev);
  for (int d = 0; d < 4; ++d) {
    const double want =
        std::sqrt(abar_p) * x0.data[d] + std::sqrt(1 - abar_p) * eps.data[d];
    CHECK(sp.mean.data[d] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("reverse_step_params contract checks") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const Tensor x = Tensor::vec({0.0, 0.0});
  const Tensor e = Tensor::vec({0.0, 0.0});
  CHECK_THROWS_AS(reverse_step_params(e, x, 10, 10, s, 0.0), ContractError);
  CHECK_THROWS_AS(reverse_step_params(e, x, 10, 20, s, 0.0), ContractError);
  CHECK_THROWS_AS(reverse_step_params(e, x, 20, 10, s, 1.5), ContractError);
}

TEST_CASE("gaussian_log_prob closed-form values") {
  const Tensor zero1 = Tensor::vec({0.0});
  CHECK(gaussian_log_prob(zero1, zero1, 1.0) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  const Tensor zero2 = Tensor::vec({0.0, 0.0});
  CHECK(gaussian_log_prob(zero2, zero2, 1.0) ==
        doctest::Approx(-1.8378770664093454).epsilon(1e-14));
  // Hand case: d=1, x=1.2, mu=0.7, sigma=0.5.
  const double want = -0.5 * (1.8378770664093454 + 2.0 * std::log(0.5)) -
                      0.25 / (2.0 * 0.25);
  CHECK(gaussian_log_prob(Tensor::vec({1.2}), Tensor::vec({0.7}), 0.5) ==
        doctest::Approx(want).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_log_prob(zero1, zero1, 0.0), ContractError);
}

TEST_CASE("gaussian_log_prob normalizes to 1 under quadrature") {
  const double mu = 0.3, sigma = 0.7;
  const Tensor muv = Tensor::vec({mu});
  const int n = 200000;
  const double lo = mu - 10 * sigma, hi = mu + 10 * sigma;
  const double dx = (hi - lo) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * dx;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    integral += w * std::exp(gaussian_log_prob(Tensor::vec({x}), muv, sigma));
  }
  integral *= dx;
  CHECK(std::abs(integral - 1.0) < 1e-6);
}

namespace {
DenoiserParams tiny_model(std::size_t context_dim, std::uint64_t seed) {
  MlpSpec spec;
  spec.sample_dim = 4;
  spec.context_dim = context_dim;
  spec.hidden = {8};
  Rng rng(seed);
  return DenoiserParams::init(spec, rng);
}
}  // namespace

TEST_CASE("classifier-free guidance is the linear extrapolation") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const DenoiserParams p = tiny_model(3, 17);
  Rng rng(2);
  const Tensor x = rng.gaussian_vec(4);
  Tensor cemb({3}, 0.0);
  cemb.data[1] = 1.0;
  const Tensor null_emb({3}, 0.0);
  const int t = 30;
  const Tensor temb = time_embedding(t, s.T);
  const Tensor cond = mlp_forward(p, x, temb, cemb);
  const Tensor uncond = mlp_forward(p, x, temb, null_emb);
  for (double w : {0.0, 1.0, 1.5, 7.0}) {
    const Tensor guided = predict_eps(p, x, t, cemb, w, s);
    for (int d = 0; d < 4; ++d) {
      const double want = uncond.data[d] + w * (cond.data[d] - uncond.data[d]);
      CHECK(guided.data[d] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("seeded trajectories are bit-reproducible and self-consistent") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const DenoiserParams p = tiny_model(3, 21);
  Tensor cemb({3}, 0.0);
  cemb.data[0] = 1.0;
  SamplerConfig cfg;
  cfg.num_inference_steps = 10;
  cfg.eta = 1.0;
  cfg.guidance_scale = 1.5;

  const Trajectory a = sample_trajectory(p, cemb, cfg, s, 99);
  const Trajectory b = sample_trajectory(p, cemb, cfg, s, 99);
  REQUIRE(a.states.size() == 11);
  REQUIRE(a.num_transitions() == 10);
  for (std::size_t k = 0; k < a.states.size(); ++k)
    CHECK(a.states[k].data == b.states[k].data);
  CHECK(a.log_probs == b.log_probs);

  const Trajectory c = sample_trajectory(p, cemb, cfg, s, 100);
  CHECK(c.states[0].data != a.states[0].data);

  // Stored log-probs agree with recomputation from the stored policy params.
  for (std::size_t k = 0; k < a.num_transitions(); ++k) {
    const double lp =
        gaussian_log_prob(a.states[k + 1], a.means[k], a.stds[k]);
    CHECK(lp == doctest::Approx(a.log_probs[k]).epsilon(1e-12));
  }

  SamplerConfig det = cfg;
  det.eta = 0.0;
  CHECK_THROWS_AS(sample_trajectory(p, cemb, det, s, 1), ContractError);
}

TEST_CASE("inference sub-schedule endpoints and monotonicity") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  const auto ts = inference_timesteps(s, 50);
  REQUIRE(ts.size() == 51);
  CHECK(ts.front() == 100);
  CHECK(ts.back() == 0);
  CHECK(ts[49] == 2);  // final hop is 2 -> 0
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) CHECK(ts[i] > ts[i + 1]);
  CHECK_THROWS_AS(inference_timesteps(s, 0), ContractError);
  CHECK_THROWS_AS(inference_timesteps(s, 101), ContractError);
}

TEST_CASE("rng streams are serializable and derivable") {
  Rng a(42);
  a.gaussian();
  a.below(17);
  const std::string state = a.serialize();
  Rng b;
  b.deserialize(state);
  for (int i = 0; i < 20; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
  CHECK(Rng::derive(1, 2) != Rng::derive(2, 2));
  CHECK(Rng::derive(1, 2) == Rng::derive(1, 2));
}
