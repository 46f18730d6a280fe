#pragma once

// Define-by-run reverse-mode autodiff over Tensor values.
//
// A Tape records every differentiable op in execution order, so node ids are
// already a topological order and backward() is a single reverse sweep. The
// tape is rebuilt for every forward pass; clear() drops all recorded state.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dts/error.hpp"
#include "dts/label_map.hpp"
#include "dts/tensor.hpp"

namespace dts {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

enum class GradMode { kOverwrite, kAccumulate };

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  /// Leaf owned by the tape; its gradient is readable through grad() after backward.
  Var leaf(Tensor value, bool requires_grad = true) { return push(std::move(value), requires_grad, nullptr); }

  /// Leaf bound to an external parameter tensor. backward() writes into p.grad().
  /// Registering the same tensor twice returns the same node.
  Var parameter(Tensor& p) {
    if (auto it = param_index_.find(&p); it != param_index_.end()) return Var{it->second};
    Var v = push(p, true, nullptr);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    param_index_.emplace(&p, v.id);
    return v;
  }

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = requires_grad ? std::move(backward) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() w.r.t. v; zeros if v was not reached.
  std::vector<float> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return std::vector<float>(n.value.numel(), 0.0f);
    return n.grad;
  }

  /// Gradient buffer of v, allocated (zeroed) on first use. For op implementations.
  float* grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0f);
    return n.grad.data();
  }
  std::span<const float> upstream(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }

  void backward(Var loss, GradMode mode = GradMode::kOverwrite) {
    const Node& root = node(loss);
    if (root.value.numel() != 1) {
      throw DimensionError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (root.requires_grad) {
      grad_buffer(loss)[0] = 1.0f;
      for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, id);
      }
    }
    for (Node& n : nodes_) {
      if (n.param == nullptr) continue;
      std::span<float> dst = n.param->grad();
      if (mode == GradMode::kOverwrite) std::fill(dst.begin(), dst.end(), 0.0f);
      for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    }
  }

  void clear() {
    nodes_.clear();
    param_index_.clear();
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<float> grad;
    bool requires_grad = false;
    Tensor* param = nullptr;
    BackwardFn backward;
  };

  Node& node(Var v) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw Error("invalid tape handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw Error("invalid tape handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> param_index_;
};

// ---------------------------------------------------------------------------
// Differentiable ops

inline Var conv2d(Tape& tape, Var input, Var kernel, int stride, int padding) {
  Tensor out = kernels::conv2d(tape.value(input), tape.value(kernel), stride, padding);
  const bool rg = tape.requires_grad(input) || tape.requires_grad(kernel);
  return tape.push(std::move(out), rg, [input, kernel, stride, padding](Tape& t, int self) {
    float* gi = t.requires_grad(input) ? t.grad_buffer(input) : nullptr;
    float* gk = t.requires_grad(kernel) ? t.grad_buffer(kernel) : nullptr;
    kernels::conv2d_backward(t.value(input), t.value(kernel), t.upstream(self), stride, padding, gi, gk);
  });
}

inline Var add_channel_bias(Tape& tape, Var input, Var bias) {
  Tensor out = kernels::add_channel_bias(tape.value(input), tape.value(bias));
  const bool rg = tape.requires_grad(input) || tape.requires_grad(bias);
  return tape.push(std::move(out), rg, [input, bias](Tape& t, int self) {
    std::span<const float> g = t.upstream(self);
    const Tensor& x = t.value(input);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    if (t.requires_grad(input)) {
      float* gi = t.grad_buffer(input);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      float* gb = t.grad_buffer(bias);
      for (int c = 0; c < x.dim(0); ++c) {
        float s = 0.0f;
        for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
        gb[c] += s;
      }
    }
  });
}

inline Var relu(Tape& tape, Var input) {
  Tensor out = kernels::relu(tape.value(input));
  return tape.push(std::move(out), tape.requires_grad(input), [input](Tape& t, int self) {
    std::span<const float> g = t.upstream(self);
    std::span<const float> x = t.value(input).data();
    float* gi = t.grad_buffer(input);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0f) gi[i] += g[i];
  });
}

inline Var upsample_nearest(Tape& tape, Var input, int factor) {
  Tensor out = kernels::upsample_nearest(tape.value(input), factor);
  return tape.push(std::move(out), tape.requires_grad(input), [input, factor](Tape& t, int self) {
    std::span<const float> g = t.upstream(self);
    const Tensor& x = t.value(input);
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int OW = W * factor;
    float* gi = t.grad_buffer(input);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H * factor; ++y)
        for (int xx = 0; xx < OW; ++xx)
          gi[(static_cast<std::size_t>(c) * H + y / factor) * W + xx / factor] +=
              g[(static_cast<std::size_t>(c) * H * factor + y) * OW + xx];
  });
}

inline Var sum(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  float s = 0.0f;
  for (float v : x.data()) s += v;
  return tape.push(Tensor({1}, {s}), tape.requires_grad(input), [input](Tape& t, int self) {
    const float g = t.upstream(self)[0];
    float* gi = t.grad_buffer(input);
    const std::size_t n = t.value(input).numel();
    for (std::size_t i = 0; i < n; ++i) gi[i] += g;
  });
}

inline Var square(Tape& tape, Var input) {
  Tensor out = tape.value(input);
  for (float& v : out.data()) v *= v;
  return tape.push(std::move(out), tape.requires_grad(input), [input](Tape& t, int self) {
    std::span<const float> g = t.upstream(self);
    std::span<const float> x = t.value(input).data();
    float* gi = t.grad_buffer(input);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += 2.0f * x[i] * g[i];
  });
}

/// Arithmetic mean of scalar nodes.
inline Var mean(Tape& tape, std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("mean of an empty list");
  float s = 0.0f;
  bool rg = false;
  for (Var v : scalars) {
    if (tape.value(v).numel() != 1) throw DimensionError("mean expects scalar inputs");
    s += tape.value(v)[0];
    rg = rg || tape.requires_grad(v);
  }
  const float inv = 1.0f / static_cast<float>(scalars.size());
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return tape.push(Tensor({1}, {s * inv}), rg, [inputs, inv](Tape& t, int self) {
    const float g = t.upstream(self)[0] * inv;
    for (Var v : inputs)
      if (t.requires_grad(v)) t.grad_buffer(v)[0] += g;
  });
}

/// Mean over non-ignored pixels of weight(p) * -log softmax(logits)[target(p), p].
/// Pixels labelled kIgnoreLabel are excluded from numerator and denominator;
/// when every pixel is ignored the loss is exactly zero with zero gradient.
inline Var weighted_cross_entropy(Tape& tape, Var logits, const LabelMap& target, const Tensor& pixel_weight) {
  const Tensor& z = tape.value(logits);
  kernels::require_rank(z, 3, "weighted_cross_entropy logits");
  const int C = z.dim(0), H = z.dim(1), W = z.dim(2);
  if (target.height != H || target.width != W) {
    throw DimensionError("cross-entropy target is " + std::to_string(target.height) + "x" +
                         std::to_string(target.width) + ", logits are " + shape_str(z.shape()));
  }
  if (pixel_weight.rank() != 2 || pixel_weight.dim(0) != H || pixel_weight.dim(1) != W) {
    throw DimensionError("pixel weight shape " + shape_str(pixel_weight.shape()) + " does not match " +
                         std::to_string(H) + "x" + std::to_string(W));
  }
  kernels::require_finite(z, "weighted_cross_entropy");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::size_t valid = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    const std::uint8_t y = target.ids[p];
    if (y == kIgnoreLabel) continue;
    if (y >= C) throw ConfigError("target class " + std::to_string(y) + " out of range for " + std::to_string(C));
    if (!(pixel_weight[p] >= 0.0f)) throw ConfigError("pixel weights must be non-negative");
    ++valid;
  }
  if (valid == 0) return tape.push(Tensor({1}, {0.0f}), false, nullptr);

  Tensor prob = kernels::softmax_channel(z);
  const float* in = z.data().data();
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    const std::uint8_t y = target.ids[p];
    if (y == kIgnoreLabel || pixel_weight[p] == 0.0f) continue;
    float mx = in[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, in[c * plane + p]);
    float se = 0.0f;
    for (int c = 0; c < C; ++c) se += std::exp(in[c * plane + p] - mx);
    const float nll = std::log(se) + mx - in[y * plane + p];
    total += static_cast<double>(pixel_weight[p]) * nll;
  }
  const float inv_valid = 1.0f / static_cast<float>(valid);
  const float loss = static_cast<float>(total) * inv_valid;

  return tape.push(Tensor({1}, {loss}), tape.requires_grad(logits),
                   [logits, target, pixel_weight, prob = std::move(prob), inv_valid](Tape& t, int self) {
                     const float g = t.upstream(self)[0] * inv_valid;
                     const int classes = prob.dim(0);
                     const std::size_t n = static_cast<std::size_t>(prob.dim(1)) * prob.dim(2);
                     float* gz = t.grad_buffer(logits);
                     for (std::size_t p = 0; p < n; ++p) {
                       const std::uint8_t y = target.ids[p];
                       const float w = pixel_weight[p];
                       if (y == kIgnoreLabel || w == 0.0f) continue;
                       const float s = g * w;
                       for (int c = 0; c < classes; ++c) {
                         const float indicator = (c == y) ? 1.0f : 0.0f;
                         gz[c * n + p] += s * (prob[c * n + p] - indicator);
                       }
                     }
                   });
}

}  // namespace dts
