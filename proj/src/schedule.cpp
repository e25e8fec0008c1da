#include "halluc/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace halluc {

WarmupCosineSchedule::WarmupCosineSchedule(double base_rate, std::size_t total_steps,
                                           double warmup_ratio)
    : base_rate_(base_rate), total_steps_(total_steps) {
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
    throw std::invalid_argument("warmup ratio must lie in [0, 1)");
  }
  warmup_steps_ = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

double WarmupCosineSchedule::rate(std::size_t step) const {
  if (step < warmup_steps_) {
    return base_rate_ * static_cast<double>(step) / static_cast<double>(warmup_steps_);
  }
  const std::size_t decay_steps = total_steps_ > warmup_steps_ ? total_steps_ - warmup_steps_ : 1;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps_) / static_cast<double>(decay_steps));
  return base_rate_ * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace halluc
