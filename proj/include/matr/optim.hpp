#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "matr/config.hpp"
#include "matr/nn.hpp"

namespace matr {

/// Cosine annealing with warm restarts. Each cycle of `cycle_epochs` ramps
/// linearly from lr_min to that cycle's peak over `warmup_epochs`, then
/// follows a half cosine back to lr_min. The peak decays by `cycle_decay` per
/// cycle. `epoch` may be fractional.
inline double lr_schedule(double epoch, const TrainConfig& cfg) {
  if (epoch < 0) epoch = 0;
  const double cycle = std::floor(epoch / cfg.cycle_epochs);
  const double in_cycle = epoch - cycle * cfg.cycle_epochs;
  const double peak = cfg.lr_max * std::pow(cfg.cycle_decay, cycle);
  if (in_cycle < cfg.warmup_epochs)
    return cfg.lr_min + (peak - cfg.lr_min) * in_cycle / cfg.warmup_epochs;
  const double progress = (in_cycle - cfg.warmup_epochs) / (cfg.cycle_epochs - cfg.warmup_epochs);
  return cfg.lr_min + (peak - cfg.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  Adam(const ParamStore<T>& params, double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.value(i).shape());
      v_.emplace_back(params.value(i).shape());
    }
  }

  void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& w = params.value(i);
      const Tensor<T>& g = grads[i];
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        m[k] = static_cast<T>(beta1_ * m[k] + (1.0 - beta1_) * gk);
        v[k] = static_cast<T>(beta2_ * v[k] + (1.0 - beta2_) * gk * gk);
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] = static_cast<T>(w[k] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.data()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (T& v : g.data()) v *= f;
  }
  return norm;
}

}  // namespace matr
