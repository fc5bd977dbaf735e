#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "blm/params.hpp"

namespace blm {

// Decoupled-weight-decay Adam. Defaults follow the training setup used
// throughout: betas (0.9, 0.95), weight decay 0.1, global grad-norm clip 1.0.
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double max_grad_norm = 1.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // One update over (param, lr) pairs sharing a global grad-norm clip.
  // Returns the pre-clip gradient norm. Weight decay skips 1-row params
  // (norm gains and other vector parameters).
  double step(const std::vector<std::pair<Param*, double>>& params_lr) {
    ++t_;
    double sq = 0.0;
    for (const auto& [p, lr] : params_lr) {
      (void)lr;
      for (double g : p->grad.v) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip =
        (cfg_.max_grad_norm > 0 && norm > cfg_.max_grad_norm) ? cfg_.max_grad_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (const auto& [p, lr] : params_lr) {
      const bool decay = p->value.rows > 1;
      for (size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad.v[i] * clip;
        p->m.v[i] = cfg_.beta1 * p->m.v[i] + (1.0 - cfg_.beta1) * g;
        p->u.v[i] = cfg_.beta2 * p->u.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = p->m.v[i] / bc1;
        const double uhat = p->u.v[i] / bc2;
        p->value.v[i] -= lr * (mhat / (std::sqrt(uhat) + cfg_.eps) +
                               cfg_.weight_decay * (decay ? p->value.v[i] : 0.0));
      }
    }
    return norm;
  }

  double step(const std::vector<Param*>& params, double lr) {
    std::vector<std::pair<Param*, double>> pl;
    pl.reserve(params.size());
    for (Param* p : params) pl.emplace_back(p, lr);
    return step(pl);
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace blm
