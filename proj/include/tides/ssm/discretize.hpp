#pragma once

#include <complex>
#include <span>
#include <string_view>
#include <vector>

#include "tides/autodiff/tape.hpp"

namespace tides::ssm {

using cplx = std::complex<double>;

enum class Discretization { zoh, bilinear };

Discretization parse_discretization(std::string_view name);
std::string_view to_string(Discretization d);

// Discrete transition for one step. b_bar is P x H row-major.
struct Discretized {
  std::vector<cplx> a_bar;
  std::vector<cplx> b_bar;
};

// Per-mode step delta_p = exp(log_step_p) * delta.
//   a_bar_p = exp(lambda_p delta_p)
//   b_bar_p = (a_bar_p - 1) / lambda_p * B_p   (-> delta_p * B_p as lambda -> 0)
Discretized discretize_zoh(std::span<const cplx> lambda, std::span<const cplx> b, double delta,
                           std::span<const double> log_step);

// Tustin:
//   a_bar_p = (1 + lambda_p delta_p / 2) / (1 - lambda_p delta_p / 2)
//   b_bar_p = delta_p / (1 - lambda_p delta_p / 2) * B_p
Discretized discretize_bilinear(std::span<const cplx> lambda, std::span<const cplx> b, double delta,
                                std::span<const double> log_step);

// (exp(z) - 1) / z without cancellation; 1 + z/2 for |z| < 1e-8.
cplx expm1_over(cplx z);

// Differentiable discretization on complex tensors [N, 2P] (see ad::ops).
// `z` is lambda * delta_p per row; `step` is delta_p as a real [N, P] tensor.
// Returns {a_bar, coefficient} with b_bar u = coefficient * (B u).
struct DiscretizedVars {
  ad::Var a_bar;
  ad::Var input_coefficient;
};
DiscretizedVars discretize(ad::Var z, ad::Var step, Discretization kind);

}  // namespace tides::ssm
