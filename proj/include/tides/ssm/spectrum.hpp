#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "tides/autodiff/tape.hpp"
#include "tides/rng.hpp"

namespace tides::ssm {

// Map from an unconstrained theta to Re(lambda).
enum class Reparam { standard, stable, exp, softplus };

Reparam parse_reparam(std::string_view name);
std::string_view to_string(Reparam r);

//   standard: theta
//   exp:      -exp(theta)
//   stable:   -1 / (theta^2 + 1/2)
//   softplus: -softplus(theta)
double reparameterize(double theta, Reparam kind);
ad::Var reparameterize(ad::Var theta, Reparam kind);
// A theta whose image is `re` (re < 0; for stable, re in [-2, 0)).
double reparam_preimage(double re, Reparam kind);

inline constexpr double kEigenFloor = -1e-5;

// Elementwise min(re, floor).
std::vector<double> clip_eigenvalues(std::span<const double> re, double floor = kEigenFloor);

struct DiagonalSpectrum {
  std::vector<double> theta;
  std::vector<double> lambda_im;
  std::vector<double> log_step;
  Reparam reparam = Reparam::standard;
  bool clip_eigs = false;

  std::size_t modes() const noexcept { return theta.size(); }
  // Re(lambda) after reparameterization and optional clipping.
  std::vector<double> real_parts() const;
};

inline constexpr double kMinInitStep = 0.001;
inline constexpr double kMaxInitStep = 0.1;

// Diagonal HiPPO-LegS normal approximation: Re(lambda_p) = -1/2,
// Im(lambda_p) = pi * p, log_step_p ~ U[ln 0.001, ln 0.1].
DiagonalSpectrum hippo_init(std::size_t modes, Reparam kind, bool clip_eigs, Rng& rng);

}  // namespace tides::ssm
