#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "test_util.hpp"
#include "tides/autodiff/ops.hpp"
#include "tides/ssm/discretize.hpp"

namespace ad = tides::ad;
using namespace tides::ssm;
using tides::Rng;

namespace {
const std::vector<double> kUnitStep{0.0};  // exp(0) = 1
}

TEST(Zoh, ScalarOracle) {
  const std::vector<cplx> lam{-1.0}, b{1.0};
  Discretized d = discretize_zoh(lam, b, 1.0, kUnitStep);
  EXPECT_NEAR(d.a_bar[0].real(), 0.36787944117144233, 1e-12);
  EXPECT_NEAR(d.b_bar[0].real(), 0.63212055882855767, 1e-12);
  EXPECT_EQ(d.a_bar[0].imag(), 0.0);
}

TEST(Zoh, ZeroEigenvalueLimit) {
  const std::vector<cplx> lam{0.0}, b{cplx(2.0, -1.0)};
  Discretized d = discretize_zoh(lam, b, 0.7, kUnitStep);
  EXPECT_EQ(d.a_bar[0], cplx(1.0));
  EXPECT_NEAR(std::abs(d.b_bar[0] - 0.7 * b[0]), 0.0, 1e-15);
  const std::vector<cplx> tiny{cplx(-1e-14, 0.0)};
  EXPECT_NEAR(std::abs(discretize_zoh(tiny, b, 0.7, kUnitStep).b_bar[0] - 0.7 * b[0]), 0.0, 1e-13);
}

TEST(Zoh, SemigroupProperty) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::vector<cplx> lam{cplx(-rng.uniform(0.01, 3.0), rng.uniform(-10, 10))}, b{1.0};
    const double d1 = rng.uniform(0.01, 2.0), d2 = rng.uniform(0.01, 2.0);
    const cplx a1 = discretize_zoh(lam, b, d1, kUnitStep).a_bar[0];
    const cplx a2 = discretize_zoh(lam, b, d2, kUnitStep).a_bar[0];
    const cplx a12 = discretize_zoh(lam, b, d1 + d2, kUnitStep).a_bar[0];
    EXPECT_NEAR(std::abs(a1 * a2 - a12), 0.0, 1e-12);
  }
}

TEST(Zoh, ExactForPiecewiseConstantInput) {
  // x(t) = e^{lt} x0 + (e^{lt} - 1) B u / l, stepped with irregular gaps.
  const cplx lam(-0.8, 2.0), bcoef(0.5, 0.25);
  Rng rng(8);
  cplx x = 0.0, oracle = 0.0;
  for (int k = 0; k < 40; ++k) {
    const double dt = rng.uniform(0.05, 1.5), u = rng.normal();
    const std::vector<cplx> lv{lam}, bv{bcoef};
    Discretized d = discretize_zoh(lv, bv, dt, kUnitStep);
    x = d.a_bar[0] * x + d.b_bar[0] * u;
    oracle = std::exp(lam * dt) * oracle + (std::exp(lam * dt) - 1.0) * bcoef * u / lam;
    ASSERT_NEAR(std::abs(x - oracle), 0.0, 1e-10);
  }
}

TEST(Zoh, LogStepScalesTheStep) {
  const std::vector<cplx> lam{-1.0, -1.0}, b{1.0, 1.0};
  const std::vector<double> ls{0.0, std::log(2.0)};
  Discretized d = discretize_zoh(lam, b, 0.5, ls);
  EXPECT_NEAR(d.a_bar[0].real(), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(d.a_bar[1].real(), std::exp(-1.0), 1e-15);
}

TEST(Zoh, RejectsNonPositiveDelta) {
  const std::vector<cplx> lam{-1.0}, b{1.0};
  EXPECT_THROW(discretize_zoh(lam, b, 0.0, kUnitStep), std::invalid_argument);
  EXPECT_THROW(discretize_zoh(lam, b, -1.0, kUnitStep), std::invalid_argument);
}

TEST(Bilinear, ScalarOracle) {
  const std::vector<cplx> lam{-1.0}, b{1.0};
  Discretized d = discretize_bilinear(lam, b, 1.0, kUnitStep);
  EXPECT_NEAR(d.a_bar[0].real(), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d.b_bar[0].real(), 2.0 / 3.0, 1e-15);
  const std::vector<cplx> zero{0.0};
  Discretized z = discretize_bilinear(zero, b, 0.4, kUnitStep);
  EXPECT_EQ(z.a_bar[0], cplx(1.0));
  EXPECT_NEAR(z.b_bar[0].real(), 0.4, 1e-15);
}

TEST(Bilinear, StableMapsIntoUnitDisk) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<cplx> lam{cplx(-rng.uniform(1e-4, 50.0), rng.uniform(-50, 50))}, b{1.0};
    EXPECT_LT(std::abs(discretize_bilinear(lam, b, rng.uniform(1e-3, 5.0), kUnitStep).a_bar[0]), 1.0);
  }
}

TEST(Bilinear, SingularModeIsNamed) {
  const std::vector<cplx> lam{-1.0, 2.0}, b{1.0, 1.0};
  try {
    discretize_bilinear(lam, b, 1.0, std::vector<double>{0.0, 0.0});
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("mode 1"), std::string::npos) << e.what();
  }
}

TEST(DiscretizeVars, AgreesWithScalarFormsAndDifferentiates) {
  Rng rng(6);
  for (Discretization kind : {Discretization::zoh, Discretization::bilinear}) {
    ad::Tensor z({2, 4}), step({2, 2});
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t p = 0; p < 2; ++p) {
        step.at(r, p) = rng.uniform(0.1, 1.0);
        z.at(r, p) = -rng.uniform(0.1, 2.0) * step.at(r, p);
        z.at(r, p + 2) = rng.uniform(-3, 3) * step.at(r, p);
      }
    }
    ad::Tape tape;
    DiscretizedVars dv = discretize(tape.constant(z), tape.constant(step), kind);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t p = 0; p < 2; ++p) {
        const double s = step.at(r, p);
        const std::vector<cplx> lam{cplx(z.at(r, p), z.at(r, p + 2)) / s}, b{1.0};
        Discretized d = kind == Discretization::zoh ? discretize_zoh(lam, b, s, kUnitStep)
                                                    : discretize_bilinear(lam, b, s, kUnitStep);
        EXPECT_NEAR(dv.a_bar.value().at(r, p), d.a_bar[0].real(), 1e-14);
        EXPECT_NEAR(dv.a_bar.value().at(r, p + 2), d.a_bar[0].imag(), 1e-14);
        EXPECT_NEAR(dv.input_coefficient.value().at(r, p), d.b_bar[0].real(), 1e-14);
        EXPECT_NEAR(dv.input_coefficient.value().at(r, p + 2), d.b_bar[0].imag(), 1e-14);
      }
    }
    auto r = tides::testing::check_graph({z, step}, [kind](std::vector<ad::Var>& v) {
      DiscretizedVars d = discretize(v[0], v[1], kind);
      return ad::add(ad::sum(ad::square(d.a_bar)), ad::sum(ad::mul(d.input_coefficient, d.input_coefficient)));
    });
    EXPECT_LT(r.max_rel_error, 1e-6) << to_string(kind);
  }
}
