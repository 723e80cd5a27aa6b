#pragma once

#include "loopnet/model.hpp"

namespace loopnet {

inline constexpr double kAdamEps = 1e-8;

/// Per-parameter first/second moment buffers plus the shared step counter.
template <typename F>
struct OptimizerState {
  struct Slot {
    std::vector<F> m;
    std::vector<F> v;
  };
  std::vector<Slot> slots;  // parallel to the parameter list
  int64_t step = 0;
};

template <typename F>
OptimizerState<F> init_optimizer(const std::vector<NamedTensor<F>>& params) {
  OptimizerState<F> s;
  s.slots.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const size_t n = static_cast<size_t>(params[i].tensor.size());
    s.slots[i].m.assign(n, F(0));
    s.slots[i].v.assign(n, F(0));
  }
  return s;
}

template <typename F>
void zero_grads(const std::vector<NamedTensor<F>>& params) {
  for (const auto& p : params) {
    p.tensor.zero_grad();
  }
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename F>
double clip_gradients(const std::vector<NamedTensor<F>>& params,
                      double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad_storage()) {
      continue;
    }
    for (F g : p.tensor.grad()) {
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const F scale = static_cast<F>(max_norm / norm);
    for (const auto& p : params) {
      if (!p.tensor.has_grad_storage()) {
        continue;
      }
      for (F& g : p.tensor.grad()) {
        g *= scale;
      }
    }
  }
  return norm;
}

/// Linear warmup to lr_max over warmup_steps (1-indexed; step 0 maps to 0),
/// then cosine decay to lr_min at total_steps, clamped afterwards.
inline double lr_schedule(int64_t step, const TrainConfig& cfg) {
  if (step <= 0) {
    return 0.0;
  }
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr_max * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.total_steps) {
    return cfg.lr_min;
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) /
      static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr_min +
         0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

/// One decoupled-weight-decay Adam update with bias correction. Decay is
/// applied only to tensors flagged for it (2-D weight matrices); gains,
/// biases and gate vectors are exempt.
template <typename F>
void adamw_step(const std::vector<NamedTensor<F>>& params,
                OptimizerState<F>& state, const TrainConfig& cfg,
                double lr_t) {
  if (state.slots.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state covers " +
                        std::to_string(state.slots.size()) +
                        " tensors but " + std::to_string(params.size()) +
                        " parameters were given");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const F b1 = static_cast<F>(cfg.beta1);
  const F b2 = static_cast<F>(cfg.beta2);

  for (size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto& slot = state.slots[i];
    F* w = p.tensor.data().data();
    const F* g = p.tensor.grad().data();
    const int64_t n = p.tensor.size();
    if (static_cast<int64_t>(slot.m.size()) != n) {
      throw ContractError("adamw_step: moment shape mismatch for '" + p.name +
                          "'");
    }
    const double wd = p.decay ? cfg.weight_decay : 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      if (!std::isfinite(gj)) {
        throw NonFiniteError("adamw_step: non-finite gradient in '" + p.name +
                             "' at flat index " + std::to_string(j));
      }
      slot.m[size_t(j)] = b1 * slot.m[size_t(j)] + (F(1) - b1) * g[j];
      slot.v[size_t(j)] = b2 * slot.v[size_t(j)] + (F(1) - b2) * g[j] * g[j];
      const double mhat = static_cast<double>(slot.m[size_t(j)]) / bc1;
      const double vhat = static_cast<double>(slot.v[size_t(j)]) / bc2;
      const double upd = mhat / (std::sqrt(vhat) + kAdamEps) +
                         wd * static_cast<double>(w[j]);
      w[j] = static_cast<F>(static_cast<double>(w[j]) - lr_t * upd);
    }
  }
}

}  // namespace loopnet
