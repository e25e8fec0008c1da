#pragma once

#include <cstddef>

namespace halluc {

/// Linear warmup from 0 to the base rate, then cosine decay to 0.
class WarmupCosineSchedule {
 public:
  WarmupCosineSchedule(double base_rate, std::size_t total_steps, double warmup_ratio);

  double rate(std::size_t step) const;
  std::size_t warmup_steps() const { return warmup_steps_; }
  std::size_t total_steps() const { return total_steps_; }

 private:
  double base_rate_;
  std::size_t total_steps_;
  std::size_t warmup_steps_;
};

}  // namespace halluc
