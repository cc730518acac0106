#include "tides/ssm/discretize.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "tides/autodiff/ops.hpp"

namespace tides::ssm {

Discretization parse_discretization(std::string_view name) {
  if (name == "zoh") return Discretization::zoh;
  if (name == "bilinear") return Discretization::bilinear;
  throw std::invalid_argument("unknown discretization '" + std::string(name) + "'");
}

std::string_view to_string(Discretization d) { return d == Discretization::zoh ? "zoh" : "bilinear"; }

cplx expm1_over(cplx z) {
  if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z;
  const double s = std::sin(0.5 * z.imag());
  const cplx em1(std::expm1(z.real()) * std::cos(z.imag()) - 2.0 * s * s, std::exp(z.real()) * std::sin(z.imag()));
  return em1 / z;
}

namespace {

void check_inputs(std::span<const cplx> lambda, std::span<const cplx> b, double delta,
                  std::span<const double> log_step, const char* who) {
  if (!(delta > 0.0)) throw std::invalid_argument(std::string(who) + ": delta must be positive");
  if (lambda.empty() || log_step.size() != lambda.size() || b.size() % lambda.size() != 0) {
    throw std::invalid_argument(std::string(who) + ": lambda/B/log_step sizes disagree");
  }
}

}  // namespace

Discretized discretize_zoh(std::span<const cplx> lambda, std::span<const cplx> b, double delta,
                           std::span<const double> log_step) {
  check_inputs(lambda, b, delta, log_step, "discretize_zoh");
  const std::size_t p = lambda.size(), h = b.size() / p;
  Discretized out{std::vector<cplx>(p), std::vector<cplx>(b.size())};
  for (std::size_t i = 0; i < p; ++i) {
    const double step = std::exp(log_step[i]) * delta;
    const cplx z = lambda[i] * step;
    out.a_bar[i] = std::exp(z);
    const cplx coef = expm1_over(z) * step;
    for (std::size_t j = 0; j < h; ++j) out.b_bar[i * h + j] = coef * b[i * h + j];
  }
  return out;
}

Discretized discretize_bilinear(std::span<const cplx> lambda, std::span<const cplx> b, double delta,
                                std::span<const double> log_step) {
  check_inputs(lambda, b, delta, log_step, "discretize_bilinear");
  const std::size_t p = lambda.size(), h = b.size() / p;
  Discretized out{std::vector<cplx>(p), std::vector<cplx>(b.size())};
  for (std::size_t i = 0; i < p; ++i) {
    const double step = std::exp(log_step[i]) * delta;
    const cplx half = lambda[i] * step * 0.5;
    const cplx den = 1.0 - half;
    if (std::abs(den) < 1e-12) {
      throw std::domain_error("discretize_bilinear: 1 - lambda*delta/2 vanishes for mode " + std::to_string(i));
    }
    out.a_bar[i] = (1.0 + half) / den;
    const cplx coef = step / den;
    for (std::size_t j = 0; j < h; ++j) out.b_bar[i * h + j] = coef * b[i * h + j];
  }
  return out;
}

DiscretizedVars discretize(ad::Var z, ad::Var step, Discretization kind) {
  if (kind == Discretization::zoh) {
    return {ad::complex_exp(z), ad::complex_scale(ad::complex_expm1_over(z), step)};
  }
  const std::size_t p = z.value().cols() / 2;
  std::vector<double> ones(2 * p, 0.0);
  for (std::size_t i = 0; i < p; ++i) ones[i] = 1.0;
  ad::Var one = z.tape->constant(ad::Tensor::vector(std::move(ones)));
  ad::Var den = ad::add(ad::scale(z, -0.5), one);
  const ad::Tensor& dv = den.value();
  for (std::size_t r = 0; r < dv.rows(); ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      if (std::hypot(dv[r * 2 * p + i], dv[r * 2 * p + p + i]) < 1e-12) {
        throw std::domain_error("discretize_bilinear: 1 - lambda*delta/2 vanishes for mode " + std::to_string(i));
      }
    }
  }
  ad::Var inv = ad::complex_reciprocal(den);
  ad::Var num = ad::add(ad::scale(z, 0.5), one);
  return {ad::complex_mul(num, inv), ad::complex_scale(inv, step)};
}

}  // namespace tides::ssm
