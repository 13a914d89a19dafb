#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pare/tensor.h"

namespace pare {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t checked = 0;     // coordinates compared
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;
using MultiScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central-difference gradient check. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8). Values passed through stop_gradient are
// frozen at the base point during the finite-difference evaluations, so the
// numeric side follows the same differentiable path as the tape (this is what
// makes straight-through estimators checkable).
GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5,
                           double tol = 1e-6);

// Multi-input variant. With max_coords_per_input > 0 only that many
// coordinates per input (chosen by a seeded shuffle) are perturbed.
GradCheckReport grad_check(const MultiScalarFn& f, const std::vector<Tensor>& inputs,
                           double step, double tol, std::size_t max_coords_per_input = 0,
                           std::uint64_t seed = 0);

}  // namespace pare
