#include <gtest/gtest.h>

#include <cmath>

#include "tides/autodiff/adam.hpp"

namespace ad = tides::ad;

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ad::Tensor p = ad::Tensor::vector({1.0, -2.0, 0.5});
  const ad::Tensor before = p;
  ad::AdamState st;
  std::vector<ad::Tensor*> params{&p};
  std::vector<ad::Tensor> grads{ad::Tensor({3})};
  ad::adam_step(params, grads, st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, FirstStepMatchesHandEvaluation) {
  ad::Tensor p = ad::Tensor::vector({0.0});
  ad::AdamState st;
  st.config.lr = 0.1;
  std::vector<ad::Tensor*> params{&p};
  std::vector<ad::Tensor> grads{ad::Tensor::vector({1.0})};
  ad::adam_step(params, grads, st);
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_GE(st.second_moment[0][0], 0.0);
}

TEST(Adam, SymmetricParamsStaySymmetric) {
  ad::Tensor a = ad::Tensor::vector({0.3, 0.3}), b = ad::Tensor::vector({0.3, 0.3});
  ad::AdamState st;
  st.config.weight_decay = 0.1;
  std::vector<ad::Tensor*> params{&a, &b};
  for (int i = 0; i < 50; ++i) {
    const double g = std::sin(0.3 * i) + a[0];
    std::vector<ad::Tensor> grads{ad::Tensor::vector({g, g}), ad::Tensor::vector({g, g})};
    ad::adam_step(params, grads, st);
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0], a[1]);
}

TEST(Adam, MisalignedShapesFail) {
  ad::Tensor p = ad::Tensor::vector({1.0, 2.0});
  ad::AdamState st;
  std::vector<ad::Tensor*> params{&p};
  std::vector<ad::Tensor> grads{ad::Tensor::vector({1.0})};
  EXPECT_THROW(ad::adam_step(params, grads, st), std::invalid_argument);
  std::vector<ad::Tensor> none;
  EXPECT_THROW(ad::adam_step(params, none, st), std::invalid_argument);
}

TEST(Adam, DecoupledWeightDecayShrinksIdleParams) {
  ad::Tensor p = ad::Tensor::vector({2.0});
  ad::AdamState st;
  st.config.lr = 0.01;
  st.config.weight_decay = 0.1;
  std::vector<ad::Tensor*> params{&p};
  std::vector<ad::Tensor> grads{ad::Tensor::vector({0.0})};
  ad::adam_step(params, grads, st);
  EXPECT_NEAR(p[0], 2.0 - 0.01 * 0.1 * 2.0, 1e-15);
}
