#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vts/numerics/autograd.hpp"

namespace vts {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar objective against central
/// differences (f(θ+h) − f(θ−h)) / 2h, elementwise over every parameter.
/// Error per entry is |analytic − numeric| / max(1, |numeric|).
/// Throws if two evaluations at the same θ differ (non-deterministic objective).
GradCheckResult grad_check(const std::function<Var()>& objective, std::span<ParamTensor* const> params,
                           double h = 1e-5);

/// Same check for several objectives sharing one forward pass; returns one
/// result per objective.
std::vector<GradCheckResult> grad_check_multi(const std::function<std::vector<Var>()>& objectives,
                                              std::span<ParamTensor* const> params, double h = 1e-5);

}  // namespace vts
