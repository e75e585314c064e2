#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "difftune/tensor.hpp"

namespace difftune {

// Reverse-mode tape. Nodes are tensor-valued and evaluated eagerly on
// construction, so the node order is a topological order by construction.
class Tape {
 public:
  using NodeId = std::size_t;

  struct GradStore {
    std::vector<Tensor> grads;  // indexed by node id; empty tensor = zero

    void accumulate(NodeId id, const Tensor& shape_like,
                    const std::vector<double>& contribution) {
      Tensor& g = grads[id];
      if (g.data.empty()) g = Tensor(shape_like.shape, 0.0);
      for (std::size_t i = 0; i < contribution.size(); ++i)
        g.data[i] += contribution[i];
    }

    Tensor& slot(NodeId id, const Tensor& shape_like) {
      Tensor& g = grads[id];
      if (g.data.empty()) g = Tensor(shape_like.shape, 0.0);
      return g;
    }
  };

  using BackwardFn = std::function<void(const Tensor& gout, GradStore& gs)>;

  NodeId push(Tensor value, BackwardFn back) {
    nodes_.push_back(Node{std::move(value), std::move(back)});
    return nodes_.size() - 1;
  }

  NodeId leaf(Tensor value) { return push(std::move(value), nullptr); }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  struct BackwardResult {
    double value = 0.0;
    std::vector<Tensor> grads;  // empty tensor where no gradient flowed
  };

  // Scalar output only; gradients are d(output)/d(node) for every node the
  // output depends on.
  BackwardResult forward_backward(NodeId output) const {
    if (!nodes_[output].value.is_scalar()) {
      throw ContractError("forward_backward: output node is not scalar, shape " +
                          shape_str(nodes_[output].value));
    }
    GradStore gs;
    gs.grads.resize(nodes_.size());
    gs.grads[output] = Tensor::scalar(1.0);
    for (std::size_t i = output + 1; i-- > 0;) {
      if (gs.grads[i].data.empty() || !nodes_[i].back) continue;
      nodes_[i].back(gs.grads[i], gs);
    }
    return BackwardResult{nodes_[output].value.data[0], std::move(gs.grads)};
  }

 private:
  struct Node {
    Tensor value;
    BackwardFn back;  // null for leaves
  };
  std::vector<Node> nodes_;
};

// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  Tape::NodeId id = 0;
  const Tensor& val() const { return tape->value(id); }
};

inline Var make_leaf(Tape& t, Tensor v) { return Var{&t, t.leaf(std::move(v))}; }

inline Var add(Var a, Var b) {
  require_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.val().data[i];
  Tape& t = *a.tape;
  auto ai = a.id, bi = b.id;
  Tensor ash = a.val(), bsh = b.val();
  auto id = t.push(std::move(out), [ai, bi, ash, bsh](const Tensor& g,
                                                      Tape::GradStore& gs) {
    gs.accumulate(ai, ash, g.data);
    gs.accumulate(bi, bsh, g.data);
  });
  return Var{&t, id};
}

inline Var sub(Var a, Var b) {
  require_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.val().data[i];
  Tape& t = *a.tape;
  auto ai = a.id, bi = b.id;
  Tensor ash = a.val(), bsh = b.val();
  auto id = t.push(std::move(out), [ai, bi, ash, bsh](const Tensor& g,
                                                      Tape::GradStore& gs) {
    gs.accumulate(ai, ash, g.data);
    Tensor& gb = gs.slot(bi, bsh);
    for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
  });
  return Var{&t, id};
}

inline Var mul(Var a, Var b) {
  require_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.val().data[i];
  Tape& t = *a.tape;
  auto ai = a.id, bi = b.id;
  Tensor av = a.val(), bv = b.val();
  auto id = t.push(std::move(out), [ai, bi, av, bv](const Tensor& g,
                                                    Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, av);
    Tensor& gb = gs.slot(bi, bv);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * bv.data[i];
      gb.data[i] += g.data[i] * av.data[i];
    }
  });
  return Var{&t, id};
}

inline Var scale(Var a, double k) {
  Tensor out = a.val();
  for (double& x : out.data) x *= k;
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor ash = a.val();
  auto id = t.push(std::move(out), [ai, k, ash](const Tensor& g,
                                                Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, ash);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += k * g.data[i];
  });
  return Var{&t, id};
}

inline Var offset(Var a, double c) {
  Tensor out = a.val();
  for (double& x : out.data) x += c;
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor ash = a.val();
  auto id = t.push(std::move(out),
                   [ai, ash](const Tensor& g, Tape::GradStore& gs) {
                     gs.accumulate(ai, ash, g.data);
                   });
  return Var{&t, id};
}

// W: {m, n} matrix, x: {n} vector -> {m} vector.
inline Var matvec(Var W, Var x) {
  const Tensor& w = W.val();
  const Tensor& v = x.val();
  if (w.shape.size() != 2 || v.shape.size() != 1 || w.cols() != v.size()) {
    throw ShapeError("matvec: incompatible shapes " + shape_str(w) + " vs " +
                     shape_str(v));
  }
  const std::size_t m = w.rows(), n = w.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    const double* wr = &w.data[r * n];
    for (std::size_t c = 0; c < n; ++c) acc += wr[c] * v.data[c];
    out.data[r] = acc;
  }
  Tape& t = *W.tape;
  auto wi = W.id, xi = x.id;
  Tensor wv = w, xv = v;
  auto id = t.push(std::move(out), [wi, xi, wv, xv, m, n](
                                       const Tensor& g, Tape::GradStore& gs) {
    Tensor& gw = gs.slot(wi, wv);
    Tensor& gx = gs.slot(xi, xv);
    for (std::size_t r = 0; r < m; ++r) {
      const double gr = g.data[r];
      const double* wr = &wv.data[r * n];
      double* gwr = &gw.data[r * n];
      for (std::size_t c = 0; c < n; ++c) {
        gwr[c] += gr * xv.data[c];
        gx.data[c] += gr * wr[c];
      }
    }
  });
  return Var{&t, id};
}

inline Var tanh_op(Var a) {
  Tensor out = a.val();
  for (double& x : out.data) x = std::tanh(x);
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor ov = out, ash = a.val();
  auto id = t.push(std::move(out), [ai, ov, ash](const Tensor& g,
                                                 Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, ash);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data[i] += g.data[i] * (1.0 - ov.data[i] * ov.data[i]);
  });
  return Var{&t, id};
}

inline Var exp_op(Var a) {
  Tensor out = a.val();
  for (double& x : out.data) x = std::exp(x);
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor ov = out, ash = a.val();
  auto id = t.push(std::move(out), [ai, ov, ash](const Tensor& g,
                                                 Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, ash);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data[i] += g.data[i] * ov.data[i];
  });
  return Var{&t, id};
}

inline Var clamp(Var a, double lo, double hi) {
  Tensor out = a.val();
  for (double& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor av = a.val();
  auto id = t.push(std::move(out), [ai, av, lo, hi](const Tensor& g,
                                                    Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, av);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av.data[i] > lo && av.data[i] < hi) ga.data[i] += g.data[i];
    }
  });
  return Var{&t, id};
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.val().data) s += x;
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor ash = a.val();
  auto id = t.push(Tensor::scalar(s), [ai, ash](const Tensor& g,
                                                Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, ash);
    for (double& x : ga.data) x += g.data[0];
  });
  return Var{&t, id};
}

// Sum of squared entries -> scalar.
inline Var sq_norm(Var a) {
  double s = 0.0;
  for (double x : a.val().data) s += x * x;
  Tape& t = *a.tape;
  auto ai = a.id;
  Tensor av = a.val();
  auto id = t.push(Tensor::scalar(s), [ai, av](const Tensor& g,
                                               Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, av);
    for (std::size_t i = 0; i < av.size(); ++i)
      ga.data[i] += 2.0 * av.data[i] * g.data[0];
  });
  return Var{&t, id};
}

inline Var dot(Var a, Var b) {
  require_same_shape(a.val(), b.val(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.val().size(); ++i)
    s += a.val().data[i] * b.val().data[i];
  Tape& t = *a.tape;
  auto ai = a.id, bi = b.id;
  Tensor av = a.val(), bv = b.val();
  auto id = t.push(Tensor::scalar(s), [ai, bi, av, bv](const Tensor& g,
                                                       Tape::GradStore& gs) {
    Tensor& ga = gs.slot(ai, av);
    Tensor& gb = gs.slot(bi, bv);
    for (std::size_t i = 0; i < av.size(); ++i) {
      ga.data[i] += g.data[0] * bv.data[i];
      gb.data[i] += g.data[0] * av.data[i];
    }
  });
  return Var{&t, id};
}

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat: empty input");
  std::size_t n = 0;
  for (const Var& p : parts) n += p.val().size();
  Tensor out({n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < p.val().size(); ++i)
      out.data[off + i] = p.val().data[i];
    off += p.val().size();
  }
  Tape& t = *parts[0].tape;
  std::vector<Tape::NodeId> ids;
  std::vector<Tensor> shapes;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    shapes.push_back(p.val());
  }
  auto id = t.push(std::move(out), [ids, shapes](const Tensor& g,
                                                 Tape::GradStore& gs) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gp = gs.slot(ids[k], shapes[k]);
      for (std::size_t i = 0; i < shapes[k].size(); ++i)
        gp.data[i] += g.data[off + i];
      off += shapes[k].size();
    }
  });
  return Var{&t, id};
}

// Mean of scalar nodes -> scalar.
inline Var mean_of(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("mean_of: empty input");
  double s = 0.0;
  for (const Var& v : terms) {
    if (!v.val().is_scalar())
      throw ContractError("mean_of: non-scalar term");
    s += v.val().data[0];
  }
  const double inv = 1.0 / static_cast<double>(terms.size());
  Tape& t = *terms[0].tape;
  std::vector<Tape::NodeId> ids;
  for (const Var& v : terms) ids.push_back(v.id);
  auto id = t.push(Tensor::scalar(s * inv), [ids, inv](const Tensor& g,
                                                       Tape::GradStore& gs) {
    for (auto nid : ids) {
      Tensor& gp = gs.slot(nid, Tensor::scalar(0.0));
      gp.data[0] += g.data[0] * inv;
    }
  });
  return Var{&t, id};
}

// Weighted sum of scalar nodes with constant weights -> scalar.
inline Var weighted_sum(const std::vector<Var>& terms,
                        const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw ContractError("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i)
    s += weights[i] * terms[i].val().data[0];
  Tape& t = *terms[0].tape;
  std::vector<Tape::NodeId> ids;
  for (const Var& v : terms) ids.push_back(v.id);
  auto id = t.push(Tensor::scalar(s), [ids, weights](const Tensor& g,
                                                     Tape::GradStore& gs) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Tensor& gp = gs.slot(ids[i], Tensor::scalar(0.0));
      gp.data[0] += g.data[0] * weights[i];
    }
  });
  return Var{&t, id};
}

// min(a, c) for scalar a and constant c; ties route the gradient through a.
inline Var min_with_const(Var a, double c) {
  if (!a.val().is_scalar()) throw ContractError("min_with_const: non-scalar");
  const double av = a.val().data[0];
  const bool take_a = av <= c;
  Tape& t = *a.tape;
  auto ai = a.id;
  auto id = t.push(Tensor::scalar(take_a ? av : c),
                   [ai, take_a](const Tensor& g, Tape::GradStore& gs) {
                     if (take_a) {
                       Tensor& ga = gs.slot(ai, Tensor::scalar(0.0));
                       ga.data[0] += g.data[0];
                     }
                   });
  return Var{&t, id};
}

}  // namespace difftune
