#pragma once

#include <cmath>
#include <stdexcept>

namespace blm {

// Linear warmup from 0 to peak over warmup_ratio * total_steps, then cosine
// decay to 0 at total_steps.
struct WarmupCosineSchedule {
  double peak_lr = 0.0;
  double warmup_ratio = 0.0;
  int total_steps = 1;

  WarmupCosineSchedule(double peak, double warmup, int total)
      : peak_lr(peak), warmup_ratio(warmup), total_steps(total) {
    if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be >= 1");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
      throw std::invalid_argument("schedule: warmup_ratio must be in [0,1)");
  }

  double lr(int step) const {
    const int warmup = static_cast<int>(std::lround(warmup_ratio * total_steps));
    if (step <= warmup)
      return warmup == 0 ? peak_lr : peak_lr * static_cast<double>(step) / warmup;
    if (step >= total_steps) return 0.0;
    const double t = static_cast<double>(step - warmup) / (total_steps - warmup);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
};

}  // namespace blm
