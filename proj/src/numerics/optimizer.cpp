#include "treeproj/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "treeproj/error.hpp"

namespace treeproj {

double warmup_learning_rate(const AdamWConfig& config, std::int64_t step) {
  expect(step >= 0, "warmup_learning_rate: negative step");
  if (config.warmup_steps <= 0) return config.base_lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(config.warmup_steps));
  return config.base_lr * frac;
}

AdamW::AdamW(AdamWConfig config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
  state_.first_moment.reserve(params_.size());
  state_.second_moment.reserve(params_.size());
  for (const Parameter* p : params_) {
    state_.first_moment.emplace_back(p->value.rows(), p->value.cols());
    state_.second_moment.emplace_back(p->value.rows(), p->value.cols());
  }
}

void AdamW::step(std::span<const Matrix> grads) {
  expect(grads.size() == params_.size(), "AdamW::step: one gradient per parameter required");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    expect(grads[i].same_shape(params_[i]->value), "AdamW::step: gradient shape mismatch for " + params_[i]->name);
    for (double g : grads[i].values())
      if (!std::isfinite(g))
        throw DivergenceError("non-finite gradient in parameter '" + params_[i]->name + "' at step " +
                              std::to_string(state_.step_count));
  }
  const double lr = current_lr();
  const double t = static_cast<double>(state_.step_count + 1);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    double* p = params_[i]->value.data();
    double* m = state_.first_moment[i].data();
    double* v = state_.second_moment[i].data();
    const double* g = grads[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * p[k]);
    }
  }
  ++state_.step_count;
}

}  // namespace treeproj
