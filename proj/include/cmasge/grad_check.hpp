#pragma once

#include "cmasge/layers.hpp"

#include <functional>
#include <span>
#include <string>

namespace cmasge {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  double backprop = 0.0;
  double numeric = 0.0;
  Index coordinates = 0;
};

// Builds the scalar loss on a fresh tape. Must be deterministic in the parameters.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares backprop gradients with central differences of step `h` over every
/// coordinate of `params`; the error per coordinate is
/// |g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8).
GradCheckResult grad_check(const LossBuilder& loss, std::span<Parameter* const> params,
                           double h = 1e-5);

}  // namespace cmasge
