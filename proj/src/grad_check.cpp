#include "cmasge/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cmasge {

namespace {
double evaluate(const LossBuilder& loss) {
  Tape tape;
  return loss(tape).value()(0, 0);
}
}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, std::span<Parameter* const> params,
                           double h) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var root = loss(tape);
    tape.backward(root);
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    analytic.push_back(p->grad);
    p->zero_grad();
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = evaluate(loss);
      x = saved - h;
      const double down = evaluate(loss);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double bp = analytic[k].data()[i];
      const double denom = std::max({std::abs(bp), std::abs(numeric), 1e-8});
      const double err = std::abs(bp - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_rel_err || result.worst_index < 0) {
        result.max_rel_err = std::max(err, result.max_rel_err);
        if (err >= result.max_rel_err) {
          result.worst_parameter = p.name;
          result.worst_index = i;
          result.backprop = bp;
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace cmasge
