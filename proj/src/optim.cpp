#include "cmasge/optim.hpp"

#include <cmath>

namespace cmasge {

void sgd_step(std::span<Parameter* const> params, const SgdOptions& opt) {
  for (const Parameter* p : params) {
    if (!all_finite(p->grad)) {
      throw RuntimeFailure("sgd_step: non-finite gradient in " + p->name);
    }
  }
  for (Parameter* p : params) {
    p->momentum = opt.momentum * p->momentum + (p->grad + opt.weight_decay * p->value);
    p->value -= opt.lr * p->momentum;
    p->grad.setZero();
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

double StepSchedule::lr_at(int epoch) const {
  if (step_epochs <= 0) return base_lr;
  return base_lr / std::pow(factor, epoch / step_epochs);
}

}  // namespace cmasge
