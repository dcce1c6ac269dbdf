#pragma once

#include "cmasge/layers.hpp"

#include <span>

namespace cmasge {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// buf <- momentum * buf + (grad + wd * value); value <- value - lr * buf; grad <- 0.
// Throws RuntimeFailure (leaving every parameter untouched) if any gradient is non-finite.
void sgd_step(std::span<Parameter* const> params, const SgdOptions& opt);

void zero_grad(std::span<Parameter* const> params);

// Learning rate divided by `factor` every `step_epochs` epochs (0 disables decay).
struct StepSchedule {
  double base_lr = 0.01;
  double factor = 10.0;
  int step_epochs = 30;

  double lr_at(int epoch) const;
};

}  // namespace cmasge
