#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lmdet/error.hpp"
#include "lmdet/layers.hpp"

namespace lmdet {

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected update for one flat parameter block; t is the 1-based step.
inline void adam_update(double* w, const double* g, double* m, double* v, size_t len,
                        const AdamConfig& cfg, long t) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < len; ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

// Optimizer state bound to a model's parameter registry. Moment buffers are
// allocated per trainable slot and always shape-match it.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const std::vector<ParamRef>& params, AdamConfig cfg = {})
      : cfg_(cfg) {
    for (const auto& p : params) {
      if (!p.trainable) continue;
      m_.emplace_back(p.len, 0.0);
      v_.emplace_back(p.len, 0.0);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  // One optimizer step over all trainable parameters. A non-finite gradient
  // aborts before any parameter is touched, naming the offending path.
  void step(std::vector<ParamRef>& params) {
    size_t slot = 0;
    for (const auto& p : params) {
      if (!p.trainable) continue;
      if (slot >= m_.size() || m_[slot].size() != p.len)
        fail(ErrorClass::shape, "AdamState does not match parameter registry at " + p.path);
      for (size_t i = 0; i < p.len; ++i)
        if (!std::isfinite(p.grad[i]))
          fail(ErrorClass::numeric, "non-finite gradient in parameter " + p.path);
      ++slot;
    }
    ++t_;
    slot = 0;
    for (auto& p : params) {
      if (!p.trainable) continue;
      adam_update(p.value, p.grad, m_[slot].data(), v_[slot].data(), p.len, cfg_, t_);
      ++slot;
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace lmdet
