#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "difftune/graph.hpp"
#include "difftune/rng.hpp"
#include "difftune/tensor.hpp"

namespace difftune {

inline constexpr std::size_t kTimeEmbedDim = 8;

// Sinusoidal features of s = t/T: sin(2^k s), cos(2^k s) for k = 0..3.
inline Tensor time_embedding(int t, int total_steps) {
  Tensor e({kTimeEmbedDim});
  const double s = static_cast<double>(t) / static_cast<double>(total_steps);
  for (int k = 0; k < 4; ++k) {
    const double w = std::ldexp(1.0, k);  // 2^k
    e.data[2 * k] = std::sin(w * s);
    e.data[2 * k + 1] = std::cos(w * s);
  }
  return e;
}

struct MlpSpec {
  std::size_t sample_dim = 4;
  std::size_t context_dim = 0;
  std::vector<std::size_t> hidden = {64, 64};

  std::size_t input_dim() const {
    return sample_dim + kTimeEmbedDim + context_dim;
  }

  bool operator==(const MlpSpec&) const = default;
};

// Noise-prediction MLP: concat(x_t, time embed, context embed) -> eps_hat.
// Tanh hidden activations, linear output. Parameter order: W0, b0, ..., Wout,
// bout with W shaped {out, in}.
struct DenoiserParams {
  MlpSpec spec;
  std::vector<Tensor> weights;

  static DenoiserParams init(const MlpSpec& spec, Rng& rng,
                             double init_scale = 0.2) {
    DenoiserParams p;
    p.spec = spec;
    std::size_t in = spec.input_dim();
    for (std::size_t h : spec.hidden) {
      p.weights.push_back(random_matrix(h, in, rng, init_scale));
      p.weights.push_back(Tensor({h}, 0.0));
      in = h;
    }
    p.weights.push_back(random_matrix(spec.sample_dim, in, rng, init_scale));
    p.weights.push_back(Tensor({spec.sample_dim}, 0.0));
    return p;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor& w : weights) n += w.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const Tensor& w : weights)
      out.insert(out.end(), w.data.begin(), w.data.end());
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != param_count())
      throw ShapeError("DenoiserParams::unflatten: length mismatch");
    std::size_t off = 0;
    for (Tensor& w : weights) {
      for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = flat[off + i];
      off += w.size();
    }
  }

 private:
  static Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                              double s) {
    Tensor w({rows, cols});
    const double scale = s / std::sqrt(static_cast<double>(cols));
    for (double& x : w.data) x = scale * rng.gaussian();
    return w;
  }
};

inline void check_mlp_inputs(const MlpSpec& spec, const Tensor& x,
                             const Tensor& temb, const Tensor& cemb) {
  if (x.size() != spec.sample_dim || temb.size() != kTimeEmbedDim ||
      cemb.size() != spec.context_dim) {
    throw ShapeError("mlp_forward: input dims (" + std::to_string(x.size()) +
                     ", " + std::to_string(temb.size()) + ", " +
                     std::to_string(cemb.size()) + ") do not match spec (" +
                     std::to_string(spec.sample_dim) + ", " +
                     std::to_string(kTimeEmbedDim) + ", " +
                     std::to_string(spec.context_dim) + ")");
  }
}

// Plain forward pass, used on the sampling path where no gradients are needed.
inline Tensor mlp_forward(const DenoiserParams& p, const Tensor& x,
                          const Tensor& temb, const Tensor& cemb) {
  check_mlp_inputs(p.spec, x, temb, cemb);
  Tensor h({p.spec.input_dim()});
  std::size_t off = 0;
  for (std::size_t i = 0; i < x.size(); ++i) h.data[off++] = x.data[i];
  for (std::size_t i = 0; i < temb.size(); ++i) h.data[off++] = temb.data[i];
  for (std::size_t i = 0; i < cemb.size(); ++i) h.data[off++] = cemb.data[i];

  const std::size_t n_layers = p.weights.size() / 2;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Tensor& W = p.weights[2 * l];
    const Tensor& b = p.weights[2 * l + 1];
    Tensor out({W.rows()});
    for (std::size_t r = 0; r < W.rows(); ++r) {
      double acc = b.data[r];
      const double* wr = &W.data[r * W.cols()];
      for (std::size_t c = 0; c < W.cols(); ++c) acc += wr[c] * h.data[c];
      out.data[r] = l + 1 < n_layers ? std::tanh(acc) : acc;
    }
    h = std::move(out);
  }
  return h;
}

// Lifts the parameter tensors onto a tape as leaves, in flatten() order.
inline std::vector<Var> lift_params(Tape& tape, const DenoiserParams& p) {
  std::vector<Var> vars;
  vars.reserve(p.weights.size());
  for (const Tensor& w : p.weights) vars.push_back(make_leaf(tape, w));
  return vars;
}

// Tape forward pass; x/temb/cemb enter as constants, params as the given
// leaf vars.
inline Var mlp_forward(Tape& tape, const std::vector<Var>& params,
                       const MlpSpec& spec, const Tensor& x,
                       const Tensor& temb, const Tensor& cemb) {
  check_mlp_inputs(spec, x, temb, cemb);
  Tensor in({spec.input_dim()});
  std::size_t off = 0;
  for (std::size_t i = 0; i < x.size(); ++i) in.data[off++] = x.data[i];
  for (std::size_t i = 0; i < temb.size(); ++i) in.data[off++] = temb.data[i];
  for (std::size_t i = 0; i < cemb.size(); ++i) in.data[off++] = cemb.data[i];

  Var h = make_leaf(tape, std::move(in));
  const std::size_t n_layers = params.size() / 2;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Var pre = add(matvec(params[2 * l], h), params[2 * l + 1]);
    h = l + 1 < n_layers ? tanh_op(pre) : pre;
  }
  return h;
}

// Collects d(loss)/d(params) in flatten() order from a backward result.
inline std::vector<double> collect_param_grads(
    const Tape::BackwardResult& res, const std::vector<Var>& params,
    const DenoiserParams& shapes) {
  std::vector<double> flat;
  flat.reserve(shapes.param_count());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = res.grads[params[i].id];
    if (g.data.empty()) {
      flat.insert(flat.end(), shapes.weights[i].size(), 0.0);
    } else {
      flat.insert(flat.end(), g.data.begin(), g.data.end());
    }
  }
  return flat;
}

}  // namespace difftune
