#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Tape is an append-only list of nodes; each node's inputs precede it,
// so a single reverse sweep from the seed visits nodes in a valid order.
// Backward never mutates the tape, so the same tape may be swept any
// number of times (e.g. once per class) and concurrently from several
// threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "guq/errors.hpp"
#include "guq/tensor.hpp"

namespace guq {

using NodeId = std::size_t;

class Tape;

/// Accumulates gradients flowing into the inputs of a node during a sweep.
class GradientSink {
 public:
  GradientSink(const Tape& tape, std::vector<std::optional<Tensor>>& grads)
      : tape_(tape), grads_(grads) {}

  inline void add(NodeId id, Tensor grad);
  inline bool wants(NodeId id) const;

 private:
  const Tape& tape_;
  std::vector<std::optional<Tensor>>& grads_;
};

using BackwardRule =
    std::function<void(const Tape&, NodeId self, const Tensor& upstream,
                       GradientSink& sink)>;

struct Node {
  std::string op;
  std::vector<NodeId> inputs;
  Tensor value;
  bool requires_grad = false;
  bool is_leaf = false;
  BackwardRule rule;
};

/// Gradients of one seed with respect to every grad-requiring leaf.
class LeafGradients {
 public:
  const Tensor& at(NodeId leaf) const {
    auto it = grads_.find(leaf);
    if (it == grads_.end()) {
      throw DomainError("node " + std::to_string(leaf) +
                        " is not a grad-requiring leaf");
    }
    return it->second;
  }
  bool contains(NodeId leaf) const { return grads_.count(leaf) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<NodeId, Tensor> grads_;
};

class Tape {
 public:
  NodeId leaf(Tensor value) { return push_leaf(std::move(value), true); }
  NodeId constant(Tensor value) { return push_leaf(std::move(value), false); }

  /// Appends an operation node. The value must already be computed.
  NodeId record(std::string op, std::vector<NodeId> inputs, Tensor value,
                BackwardRule rule) {
    if (!value.all_finite()) {
      throw DomainError("operation '" + op + "' produced a non-finite value");
    }
    Node n;
    n.requires_grad = false;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) {
        throw DomainError("operation '" + op + "' references unknown node " +
                          std::to_string(in));
      }
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.rule = std::move(rule);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of a scalar node with respect to every grad-requiring leaf.
  LeafGradients backward(NodeId seed) const {
    const Tensor& v = value(seed);
    if (v.size() != 1) {
      throw DomainError("backward seed must be scalar, got shape " +
                        shape_string(v.shape()));
    }
    return backward(seed, Tensor::filled(v.shape(), 1.0));
  }

  /// Vector-Jacobian product: sweeps `upstream` (shaped like the node's
  /// value) back to the leaves.
  LeafGradients backward(NodeId node_id, const Tensor& upstream) const {
    value(node_id).require_same_shape(upstream, "backward upstream");
    std::vector<std::optional<Tensor>> grads(node_id + 1);
    grads[node_id] = upstream;
    GradientSink sink(*this, grads);
    for (NodeId id = node_id + 1; id-- > 0;) {
      if (!grads[id]) continue;
      const Node& n = nodes_[id];
      if (!n.requires_grad || n.is_leaf) continue;
      n.rule(*this, id, *grads[id], sink);
      if (id != node_id) grads[id].reset();
    }
    LeafGradients out;
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (!n.is_leaf || !n.requires_grad) continue;
      if (id < grads.size() && grads[id]) {
        out.grads_.emplace(id, std::move(*grads[id]));
      } else {
        out.grads_.emplace(id, Tensor(n.value.shape()));
      }
    }
    return out;
  }

 private:
  NodeId push_leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw DomainError("leaf value is not finite");
    Node n;
    n.op = requires_grad ? "leaf" : "constant";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
};

inline bool GradientSink::wants(NodeId id) const {
  return tape_.node(id).requires_grad;
}

inline void GradientSink::add(NodeId id, Tensor grad) {
  if (!wants(id)) return;
  if (grads_[id]) {
    *grads_[id] += grad;
  } else {
    grads_[id] = std::move(grad);
  }
}

namespace ops {

inline NodeId add(Tape& t, NodeId a, NodeId b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  x.require_same_shape(y, "add");
  Tensor out = x;
  out += y;
  return t.record("add", {a, b}, std::move(out),
                  [](const Tape& tp, NodeId self, const Tensor& g,
                     GradientSink& sink) {
                    const auto& in = tp.node(self).inputs;
                    sink.add(in[0], g);
                    sink.add(in[1], g);
                  });
}

inline NodeId mul(Tape& t, NodeId a, NodeId b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  x.require_same_shape(y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return t.record("mul", {a, b}, std::move(out),
                  [](const Tape& tp, NodeId self, const Tensor& g,
                     GradientSink& sink) {
                    const auto& in = tp.node(self).inputs;
                    const Tensor& x = tp.value(in[0]);
                    const Tensor& y = tp.value(in[1]);
                    if (sink.wants(in[0])) {
                      Tensor gx = g;
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i];
                      sink.add(in[0], std::move(gx));
                    }
                    if (sink.wants(in[1])) {
                      Tensor gy = g;
                      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] *= x[i];
                      sink.add(in[1], std::move(gy));
                    }
                  });
}

/// Elementwise product with a constant tensor (dropout masks, fixed scales).
inline NodeId mul_constant(Tape& t, NodeId a, Tensor factor) {
  const Tensor& x = t.value(a);
  x.require_same_shape(factor, "mul_constant");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return t.record("mul_constant", {a}, std::move(out),
                  [factor = std::move(factor)](const Tape& tp, NodeId self,
                                               const Tensor& g,
                                               GradientSink& sink) {
                    Tensor gx = g;
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] *= factor[i];
                    }
                    sink.add(tp.node(self).inputs[0], std::move(gx));
                  });
}

inline NodeId sum(Tape& t, NodeId a) {
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.record("sum", {a}, Tensor::scalar(s),
                  [](const Tape& tp, NodeId self, const Tensor& g,
                     GradientSink& sink) {
                    NodeId in = tp.node(self).inputs[0];
                    sink.add(in, Tensor::filled(tp.value(in).shape(), g.item()));
                  });
}

/// Scalar contraction sum_i w_i a_i with constant weights. Used to seed
/// backward passes: one-hot weights pick a single log-probability, uniform
/// weights average several.
inline NodeId weighted_sum(Tape& t, NodeId a, Tensor weights) {
  const Tensor& x = t.value(a);
  x.require_same_shape(weights, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  return t.record("weighted_sum", {a}, Tensor::scalar(s),
                  [w = std::move(weights)](const Tape& tp, NodeId self,
                                           const Tensor& g,
                                           GradientSink& sink) {
                    Tensor gx = w;
                    gx.scale(g.item());
                    sink.add(tp.node(self).inputs[0], std::move(gx));
                  });
}

inline NodeId reshape(Tape& t, NodeId a, Shape shape) {
  Tensor out = t.value(a).reshaped(std::move(shape));
  return t.record("reshape", {a}, std::move(out),
                  [](const Tape& tp, NodeId self, const Tensor& g,
                     GradientSink& sink) {
                    NodeId in = tp.node(self).inputs[0];
                    sink.add(in, g.reshaped(tp.value(in).shape()));
                  });
}

/// Standard matrix product of [m x k] and [k x n].
inline NodeId matmul(Tape& t, NodeId a, NodeId b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(x.shape()) +
                     " and " + shape_string(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += xv * y.at(p, j);
    }
  }
  return t.record(
      "matmul", {a, b}, std::move(out),
      [m, k, n](const Tape& tp, NodeId self, const Tensor& g,
                GradientSink& sink) {
        const auto& in = tp.node(self).inputs;
        const Tensor& x = tp.value(in[0]);
        const Tensor& y = tp.value(in[1]);
        if (sink.wants(in[0])) {
          // dX = G * Y^T
          Tensor gx(Shape{m, k});
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * y.at(p, j);
              gx.at(i, p) = s;
            }
          }
          sink.add(in[0], std::move(gx));
        }
        if (sink.wants(in[1])) {
          // dY = X^T * G
          Tensor gy(Shape{k, n});
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x.at(i, p);
              for (std::size_t j = 0; j < n; ++j) gy.at(p, j) += xv * g.at(i, j);
            }
          }
          sink.add(in[1], std::move(gy));
        }
      });
}

/// Adds bias[n] to every row of x[m x n] (or to x[n]).
inline NodeId add_bias(Tape& t, NodeId a, NodeId bias) {
  const Tensor& x = t.value(a);
  const Tensor& b = t.value(bias);
  const std::size_t n = b.size();
  if (b.rank() != 1 || x.size() % n != 0 || x.shape().back() != n) {
    throw ShapeError("add_bias: incompatible shapes " +
                     shape_string(x.shape()) + " and " +
                     shape_string(b.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  return t.record("add_bias", {a, bias}, std::move(out),
                  [n](const Tape& tp, NodeId self, const Tensor& g,
                      GradientSink& sink) {
                    const auto& in = tp.node(self).inputs;
                    sink.add(in[0], g);
                    if (sink.wants(in[1])) {
                      Tensor gb(Shape{n});
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                      sink.add(in[1], std::move(gb));
                    }
                  });
}

/// max(0, x); the subgradient at exactly 0 is 0.
inline NodeId relu(Tape& t, NodeId a) {
  Tensor out = t.value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record("relu", {a}, std::move(out),
                  [](const Tape& tp, NodeId self, const Tensor& g,
                     GradientSink& sink) {
                    NodeId in = tp.node(self).inputs[0];
                    const Tensor& x = tp.value(in);
                    Tensor gx = g;
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      if (!(x[i] > 0.0)) gx[i] = 0.0;
                    }
                    sink.add(in, std::move(gx));
                  });
}

/// Valid-padding, stride-1 cross-correlation with per-channel bias.
/// input [c_in x h x w], kernels [c_out x c_in x kh x kw], bias [c_out].
inline NodeId conv2d(Tape& t, NodeId input, NodeId kernels, NodeId bias) {
  const Tensor& x = t.value(input);
  const Tensor& k = t.value(kernels);
  const Tensor& b = t.value(bias);
  if (x.rank() != 3 || k.rank() != 4 || b.rank() != 1 || k.dim(1) != x.dim(0) ||
      b.dim(0) != k.dim(0)) {
    throw ShapeError("conv2d: incompatible shapes input " +
                     shape_string(x.shape()) + ", kernels " +
                     shape_string(k.shape()) + ", bias " +
                     shape_string(b.shape()));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (kh > h || kw > w) {
    throw ShapeError("conv2d: kernel " + shape_string(k.shape()) +
                     " larger than input " + shape_string(x.shape()));
  }
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  auto xi = [=](std::size_t c, std::size_t i, std::size_t j) {
    return (c * h + i) * w + j;
  };
  auto ki = [=](std::size_t o, std::size_t c, std::size_t u, std::size_t v) {
    return ((o * cin + c) * kh + u) * kw + v;
  };
  auto oi = [=](std::size_t o, std::size_t i, std::size_t j) {
    return (o * oh + i) * ow + j;
  };
  Tensor out(Shape{cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double s = b[o];
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t u = 0; u < kh; ++u) {
            for (std::size_t v = 0; v < kw; ++v) {
              s += x[xi(c, i + u, j + v)] * k[ki(o, c, u, v)];
            }
          }
        }
        out[oi(o, i, j)] = s;
      }
    }
  }
  return t.record(
      "conv2d", {input, kernels, bias}, std::move(out),
      [=](const Tape& tp, NodeId self, const Tensor& g, GradientSink& sink) {
        const auto& in = tp.node(self).inputs;
        const Tensor& x = tp.value(in[0]);
        const Tensor& k = tp.value(in[1]);
        const bool want_x = sink.wants(in[0]);
        const bool want_k = sink.wants(in[1]);
        Tensor gx(x.shape());
        Tensor gk(k.shape());
        Tensor gb(Shape{cout});
        for (std::size_t o = 0; o < cout; ++o) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              const double go = g[oi(o, i, j)];
              gb[o] += go;
              for (std::size_t c = 0; c < cin; ++c) {
                for (std::size_t u = 0; u < kh; ++u) {
                  for (std::size_t v = 0; v < kw; ++v) {
                    if (want_x) gx[xi(c, i + u, j + v)] += go * k[ki(o, c, u, v)];
                    if (want_k) gk[ki(o, c, u, v)] += go * x[xi(c, i + u, j + v)];
                  }
                }
              }
            }
          }
        }
        if (want_x) sink.add(in[0], std::move(gx));
        if (want_k) sink.add(in[1], std::move(gk));
        sink.add(in[2], std::move(gb));
      });
}

/// Non-overlapping 2x2 max pooling over [c x h x w]; gradient goes to the
/// first maximal entry of each window (row-major order).
inline NodeId maxpool2d(Tape& t, NodeId input) {
  const Tensor& x = t.value(input);
  if (x.rank() != 3 || x.dim(1) < 2 || x.dim(2) < 2) {
    throw ShapeError("maxpool2d: input must be [c x h x w] with h, w >= 2, got " +
                     shape_string(x.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ch * h + 2 * i) * w + 2 * j;
        for (std::size_t u = 0; u < 2; ++u) {
          for (std::size_t v = 0; v < 2; ++v) {
            const std::size_t idx = (ch * h + 2 * i + u) * w + 2 * j + v;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + i) * ow + j;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return t.record("maxpool2d", {input}, std::move(out),
                  [argmax = std::move(argmax)](const Tape& tp, NodeId self,
                                               const Tensor& g,
                                               GradientSink& sink) {
                    NodeId in = tp.node(self).inputs[0];
                    Tensor gx(tp.value(in).shape());
                    for (std::size_t o = 0; o < argmax.size(); ++o) {
                      gx[argmax[o]] += g[o];
                    }
                    sink.add(in, std::move(gx));
                  });
}

/// Stacks equally sized tensors as the rows of a [count x size] matrix.
inline NodeId stack_rows(Tape& t, const std::vector<NodeId>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t n = t.value(rows.front()).size();
  Tensor out(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& v = t.value(rows[r]);
    if (v.size() != n) {
      throw ShapeError("stack_rows: row " + std::to_string(r) + " has shape " +
                       shape_string(v.shape()) + ", expected " +
                       std::to_string(n) + " elements");
    }
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + r * n);
  }
  return t.record("stack_rows", rows, std::move(out),
                  [n](const Tape& tp, NodeId self, const Tensor& g,
                      GradientSink& sink) {
                    const auto& in = tp.node(self).inputs;
                    for (std::size_t r = 0; r < in.size(); ++r) {
                      if (!sink.wants(in[r])) continue;
                      std::vector<double> part(g.data().begin() + r * n,
                                               g.data().begin() + (r + 1) * n);
                      sink.add(in[r], Tensor(tp.value(in[r]).shape(),
                                             std::move(part)));
                    }
                  });
}

/// Row-wise log-softmax of [C] or [B x C], stabilized by max subtraction.
inline NodeId log_softmax(Tape& t, NodeId a) {
  const Tensor& z = t.value(a);
  if (z.rank() != 1 && z.rank() != 2) {
    throw ShapeError("log_softmax: expected [C] or [B x C], got " +
                     shape_string(z.shape()));
  }
  const std::size_t classes = z.shape().back();
  if (classes < 2) {
    throw DomainError("log_softmax: need at least 2 classes, got " +
                      std::to_string(classes));
  }
  const std::size_t rows = z.size() / classes;
  Tensor out = z;
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.data().subspan(r * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    // Shift first so large equal logits keep full precision.
    const double log_s = std::log(s);
    for (double& v : row) v = (v - mx) - log_s;
  }
  return t.record("log_softmax", {a}, std::move(out),
                  [rows, classes](const Tape& tp, NodeId self, const Tensor& g,
                                  GradientSink& sink) {
                    const Tensor& y = tp.value(self);
                    Tensor gz = g;
                    for (std::size_t r = 0; r < rows; ++r) {
                      double gs = 0.0;
                      for (std::size_t c = 0; c < classes; ++c) {
                        gs += g[r * classes + c];
                      }
                      for (std::size_t c = 0; c < classes; ++c) {
                        const std::size_t i = r * classes + c;
                        gz[i] = g[i] - std::exp(y[i]) * gs;
                      }
                    }
                    sink.add(tp.node(self).inputs[0], std::move(gz));
                  });
}

}  // namespace ops

/// Builds a scalar from a single leaf; used by grad_check.
using ScalarBuilder = std::function<NodeId(Tape&, NodeId)>;

/// Largest componentwise relative error between the reverse-mode gradient
/// of `f` at `point` and central differences with step `h`. The relative
/// error uses max(|g|, 1e-8) as denominator, g being the reverse-mode value.
inline double grad_check(const ScalarBuilder& f, const Tensor& point,
                         double h = 1e-5) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
  Tape tape;
  NodeId x = tape.leaf(point);
  NodeId y = f(tape, x);
  const Tensor grad = tape.backward(y).at(x);

  auto eval = [&](const Tensor& p) {
    Tape tp;
    NodeId xi = tp.leaf(p);
    return tp.value(f(tp, xi)).item();
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = eval(probe);
    probe[i] = point[i] - h;
    const double down = eval(probe);
    probe[i] = point[i];
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(fd - grad[i]) / std::max(std::abs(grad[i]), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace guq
