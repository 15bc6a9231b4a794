#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "treeproj/autodiff.hpp"

namespace treeproj {

struct AdamWConfig {
  double base_lr = 1e-4;
  std::int64_t warmup_steps = 5000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step_count = 0;
};

// base_lr * min(1, step / warmup); warmup 0 means no warmup.
double warmup_learning_rate(const AdamWConfig& config, std::int64_t step);

// AdamW with decoupled weight decay and linear warmup from 0.
class AdamW {
 public:
  AdamW(AdamWConfig config, std::vector<Parameter*> params);

  // Applies one update using the learning rate for the current step count,
  // then increments it. Throws DivergenceError naming the first parameter
  // whose gradient holds a NaN/Inf, before touching any parameter.
  void step(std::span<const Matrix> grads);

  double current_lr() const { return warmup_learning_rate(config_, state_.step_count); }
  const OptimizerState& state() const { return state_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<Parameter*> params_;
  OptimizerState state_;
};

}  // namespace treeproj
