#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dts/error.hpp"
#include "dts/tensor.hpp"

namespace dts {

struct AdamWHyper {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

/// Moment buffers for one parameter list. `lr_scale[i]` multiplies the step lr
/// for parameter i (the decoder runs at 10x the encoder rate by default).
struct OptimState {
  AdamWHyper hyper;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::vector<float> lr_scale;
  std::int64_t step = 0;

  OptimState() = default;
  OptimState(std::span<Tensor* const> params, AdamWHyper h, std::vector<float> scales = {}) : hyper(h) {
    for (const Tensor* p : params) {
      m.emplace_back(p->numel(), 0.0f);
      v.emplace_back(p->numel(), 0.0f);
    }
    lr_scale = scales.empty() ? std::vector<float>(params.size(), 1.0f) : std::move(scales);
    if (lr_scale.size() != params.size()) throw ConfigError("lr_scale must have one entry per parameter");
  }
};

/// One decoupled-weight-decay Adam update using each tensor's grad buffer.
/// All gradients are checked before anything is modified; a non-finite entry
/// throws NumericError naming the parameter index.
inline void adamw_step(std::span<Tensor* const> params, OptimState& state, float lr) {
  if (params.size() != state.m.size()) {
    throw DimensionError("optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  if (!(lr >= 0.0f)) throw ConfigError("learning rate must be >= 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (p.numel() != state.m[i].size()) {
      throw DimensionError("parameter " + std::to_string(i) + " changed size since optimizer creation");
    }
    if (!p.has_grad()) continue;
    for (float g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + std::to_string(i));
    }
  }

  state.step += 1;
  const AdamWHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(h.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(h.beta2), t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    std::span<float> w = p.data();
    std::span<const float> g = p.grad();
    std::vector<float>& m = state.m[i];
    std::vector<float>& v = state.v[i];
    const float step_lr = lr * state.lr_scale[i];
    const float decay = 1.0f - step_lr * h.weight_decay;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0f - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0f - h.beta2) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      w[j] = w[j] * decay - step_lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

enum class DecayKind { kConstant, kPoly };

struct LrSchedule {
  DecayKind decay = DecayKind::kConstant;
  float poly_power = 1.0f;
};

inline void validate_schedule(int warmup_iters, int total_iters) {
  if (warmup_iters < 0 || total_iters < 0) throw ConfigError("iteration counts must be non-negative");
  if (warmup_iters > total_iters) {
    throw ConfigError("warmup iterations (" + std::to_string(warmup_iters) + ") exceed total iterations (" +
                      std::to_string(total_iters) + ")");
  }
}

/// Linear warm-up from 0 to base_lr over [0, warmup_iters], then constant or
/// polynomial decay towards 0 at total_iters.
inline float lr_at(int iter, float base_lr, int warmup_iters, int total_iters, LrSchedule schedule = {}) {
  validate_schedule(warmup_iters, total_iters);
  if (iter < 0 || iter > total_iters) throw ConfigError("iteration outside [0, total]");
  if (iter < warmup_iters) {
    return base_lr * static_cast<float>(static_cast<double>(iter) / static_cast<double>(warmup_iters));
  }
  if (schedule.decay == DecayKind::kConstant || total_iters == warmup_iters) return base_lr;
  const double progress =
      static_cast<double>(iter - warmup_iters) / static_cast<double>(total_iters - warmup_iters);
  return base_lr * static_cast<float>(std::pow(1.0 - progress, static_cast<double>(schedule.poly_power)));
}

}  // namespace dts
