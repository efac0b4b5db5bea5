#pragma once

namespace acceptance {

// Worst relative error between analytic and finite-difference gradients over
// every parameter of a small cascade model, computed in 64-bit precision.
struct GradCheckResult {
  double max_rel_error = 0;
  unsigned long parameters = 0;
};

GradCheckResult full_model_gradient_check();

}  // namespace acceptance
