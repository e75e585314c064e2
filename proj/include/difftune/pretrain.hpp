#pragma once

#include <vector>

#include "difftune/graph.hpp"
#include "difftune/mlp.hpp"
#include "difftune/rng.hpp"
#include "difftune/schedule.hpp"

namespace difftune {

struct PretrainExample {
  Tensor context_embed;
  Tensor x0;
};

// Randomness for one loss element, drawn up front so the loss is a
// deterministic function of theta afterwards (finite-difference friendly).
struct PretrainDraw {
  int t = 1;
  Tensor eps;
  bool drop_context = false;
};

inline std::vector<PretrainDraw> draw_pretrain_noise(
    const std::vector<PretrainExample>& batch, const NoiseSchedule& s,
    double context_dropout_p, Rng& rng) {
  std::vector<PretrainDraw> draws;
  draws.reserve(batch.size());
  for (const PretrainExample& ex : batch) {
    PretrainDraw d;
    d.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    d.eps = rng.gaussian_vec(ex.x0.size());
    d.drop_context = context_dropout_p > 0.0 && rng.uniform() < context_dropout_p;
    draws.push_back(std::move(d));
  }
  return draws;
}

// Per-element squared noise-prediction errors ||eps - eps_theta(x_t, t, c)||^2.
inline std::vector<Var> per_sample_pretrain_losses(
    Tape& tape, const std::vector<Var>& params, const MlpSpec& spec,
    const std::vector<PretrainExample>& batch,
    const std::vector<PretrainDraw>& draws, const NoiseSchedule& s) {
  if (batch.empty()) throw ContractError("pretraining_loss: empty batch");
  if (batch.size() != draws.size())
    throw ContractError("pretraining_loss: batch/draw size mismatch");
  std::vector<Var> losses;
  losses.reserve(batch.size());
  const Tensor null_emb(Tensor({spec.context_dim}, 0.0));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PretrainDraw& d = draws[i];
    const Tensor x_t = forward_noise(batch[i].x0, d.t, d.eps, s);
    const Tensor temb = time_embedding(d.t, s.T);
    const Tensor& cemb =
        d.drop_context ? null_emb : batch[i].context_embed;
    Var pred = mlp_forward(tape, params, spec, x_t, temb, cemb);
    Var err = sub(pred, make_leaf(tape, d.eps));
    losses.push_back(sq_norm(err));
  }
  return losses;
}

// Mean over the batch of the squared noise-prediction error; differentiable
// w.r.t. the parameter leaves.
inline Var pretraining_loss(Tape& tape, const std::vector<Var>& params,
                            const MlpSpec& spec,
                            const std::vector<PretrainExample>& batch,
                            const NoiseSchedule& s, double context_dropout_p,
                            Rng& rng) {
  const auto draws = draw_pretrain_noise(batch, s, context_dropout_p, rng);
  return mean_of(
      per_sample_pretrain_losses(tape, params, spec, batch, draws, s));
}

}  // namespace difftune
