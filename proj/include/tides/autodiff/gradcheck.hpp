#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tides/autodiff/tape.hpp"

namespace tides::ad {

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

using ParamEval = std::function<ValueAndGrad(std::span<const double>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences with step h on every coordinate. Relative error per
// coordinate is |a - n| / max(|a|, |n|, 1e-12); the maximum is reported.
// Throws std::domain_error when any evaluation is not finite.
GradCheckResult finite_difference_check(const ParamEval& eval, std::span<const double> params, double h);

// Same check over parameter tensors that `build` binds through a
// ParamBinder; the tensors are restored afterwards.
GradCheckResult check_param_gradients(const std::vector<Tensor*>& params, const std::function<Var(ParamBinder&)>& build,
                                      double h);

}  // namespace tides::ad
