#pragma once

#include <cmath>

#include "params.hpp"

namespace uvf {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  void validate() const {
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ConfigError("adam betas must lie in [0,1)");
    if (eps <= 0.0) throw ConfigError("adam eps must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  }
};

// Decoupled weight decay Adam over a ParamRegistry, updating parameters in
// registration order. Parameters with a null gradient are skipped.
class AdamW {
 public:
  AdamW(ParamRegistry& reg, AdamWConfig cfg) : reg_(reg), cfg_(cfg) {
    cfg_.validate();
    for (const auto& [name, v] : reg_.items()) {
      m_.emplace_back(v->value.shape(), 0.0);
      v_.emplace_back(v->value.shape(), 0.0);
    }
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) {
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    cfg_.lr = lr;
  }
  int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const auto& items = reg_.items();
    for (size_t i = 0; i < items.size(); ++i) {
      Var p = items[i].second;
      if (!p->grad_ready) continue;
      auto& m = m_[i].vec();
      auto& v = v_[i].vec();
      auto& w = p->value.vec();
      const auto& g = p->grad.vec();
      for (size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        double mh = m[j] / bc1;
        double vh = v[j] / bc2;
        w[j] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[j]);
      }
    }
  }

  void zero_grads() { reg_.zero_grads(); }

 private:
  ParamRegistry& reg_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Linear warmup (lr * step / warmup) then cosine decay; continuous at the
// junction (both sides give base_lr at step == warmup) and exactly zero at
// the final step total_steps - 1. step is zero-based.
inline double lr_at(int64_t step, int64_t warmup_steps, int64_t total_steps, double base_lr) {
  if (step < 0) throw ConfigError("lr_at: step must be >= 0");
  if (total_steps <= 0) throw ConfigError("lr_at: total_steps must be > 0");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ConfigError("lr_at: warmup_steps must lie in [0, total_steps)");
  if (step < warmup_steps) return base_lr * double(step) / double(warmup_steps);
  if (step >= total_steps - 1) return warmup_steps == total_steps - 1 ? base_lr : 0.0;
  double progress = double(step - warmup_steps) / double(total_steps - 1 - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(progress * 3.14159265358979323846));
}

}  // namespace uvf
