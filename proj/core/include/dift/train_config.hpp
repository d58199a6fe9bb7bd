#pragma once

#include <cstdint>

#include "dift/common.hpp"

namespace dift {

/// Optimizer and schedule hyperparameters, desk-scaled. AdamW with decoupled
/// weight decay, linear warmup then linear decay to zero.
struct TrainConfig {
  double lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  int warmup_steps = 100;
  double weight_decay = 0.1;
  int batch_tokens = 1024;
  int total_steps = 2000;
  std::uint64_t seed = 1;
  int eval_every = 200;

  void validate() const {
    require(lr > 0.0, "TrainConfig: lr must be positive");
    require(warmup_steps >= 0 && warmup_steps <= total_steps,
            "TrainConfig: warmup must not exceed total_steps");
    require(total_steps >= 1, "TrainConfig: total_steps must be positive");
    require(batch_tokens >= 1, "TrainConfig: batch_tokens must be positive");
    require(eval_every >= 1, "TrainConfig: eval_every must be positive");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "TrainConfig: betas must lie in [0,1)");
  }
};

inline double lr_schedule(const TrainConfig& c, int step) {
  if (step < c.warmup_steps)
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  if (c.total_steps == c.warmup_steps) return c.lr;
  const double t = static_cast<double>(step - c.warmup_steps) /
                   static_cast<double>(c.total_steps - c.warmup_steps);
  return c.lr * (1.0 - t);
}

}  // namespace dift
