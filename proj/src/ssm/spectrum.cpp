#include "tides/ssm/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "tides/autodiff/ops.hpp"

namespace tides::ssm {

Reparam parse_reparam(std::string_view name) {
  if (name == "standard") return Reparam::standard;
  if (name == "stable") return Reparam::stable;
  if (name == "exp") return Reparam::exp;
  if (name == "softplus") return Reparam::softplus;
  throw std::invalid_argument("unknown reparameterization '" + std::string(name) + "'");
}

std::string_view to_string(Reparam r) {
  switch (r) {
    case Reparam::standard: return "standard";
    case Reparam::stable: return "stable";
    case Reparam::exp: return "exp";
    case Reparam::softplus: return "softplus";
  }
  return "standard";
}

double reparameterize(double theta, Reparam kind) {
  switch (kind) {
    case Reparam::standard: return theta;
    case Reparam::exp: return -std::exp(theta);
    case Reparam::stable: return -1.0 / (theta * theta + 0.5);
    case Reparam::softplus:
      return -(theta > 0 ? theta + std::log1p(std::exp(-theta)) : std::log1p(std::exp(theta)));
  }
  return theta;
}

ad::Var reparameterize(ad::Var theta, Reparam kind) {
  switch (kind) {
    case Reparam::standard: return theta;
    case Reparam::exp: return ad::neg(ad::exp(theta));
    case Reparam::stable: return ad::neg(ad::reciprocal(ad::add_scalar(ad::square(theta), 0.5)));
    case Reparam::softplus: return ad::neg(ad::softplus(theta));
  }
  return theta;
}

double reparam_preimage(double re, Reparam kind) {
  if (kind != Reparam::standard && !(re < 0.0)) {
    throw std::invalid_argument("reparam_preimage: Re(lambda) must be negative");
  }
  switch (kind) {
    case Reparam::standard: return re;
    case Reparam::exp: return std::log(-re);
    case Reparam::stable:
      if (re < -2.0) throw std::invalid_argument("reparam_preimage: stable map cannot reach below -2");
      return std::sqrt(-1.0 / re - 0.5);
    case Reparam::softplus: return std::log(std::expm1(-re));
  }
  return re;
}

std::vector<double> clip_eigenvalues(std::span<const double> re, double floor) {
  if (!(floor < 0.0)) throw std::invalid_argument("clip_eigenvalues: floor must be negative");
  std::vector<double> out(re.begin(), re.end());
  for (double& v : out) v = std::min(v, floor);
  return out;
}

std::vector<double> DiagonalSpectrum::real_parts() const {
  std::vector<double> re(theta.size());
  for (std::size_t p = 0; p < theta.size(); ++p) re[p] = reparameterize(theta[p], reparam);
  return clip_eigs ? clip_eigenvalues(re) : re;
}

DiagonalSpectrum hippo_init(std::size_t modes, Reparam kind, bool clip_eigs, Rng& rng) {
  if (modes == 0) throw std::invalid_argument("hippo_init: need at least one mode");
  DiagonalSpectrum s;
  s.reparam = kind;
  s.clip_eigs = clip_eigs;
  const double theta = reparam_preimage(-0.5, kind);
  const double lo = std::log(kMinInitStep), hi = std::log(kMaxInitStep);
  for (std::size_t p = 0; p < modes; ++p) {
    s.theta.push_back(theta);
    s.lambda_im.push_back(std::numbers::pi * static_cast<double>(p));
    s.log_step.push_back(rng.uniform(lo, hi));
  }
  return s;
}

}  // namespace tides::ssm
