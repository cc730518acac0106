#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tides/autodiff/ops.hpp"
#include "tides/block/model.hpp"

namespace ad = tides::ad;
using namespace tides::block;
using tides::Rng;
using tides::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 3;
  c.hidden = 4;
  c.layers = 2;
  c.ssm_mult = 4;
  c.bc_rank = 2;
  c.selectivity = {true, false, true};
  c.output_dim = 3;
  return c;
}

ad::Tensor steps(std::size_t rows, Rng& rng) {
  ad::Tensor d({rows, 1});
  for (double& v : d.data()) v = rng.uniform(0.5, 1.5);
  return d;
}

void zero_all(Block& b) {
  b.ssm.visit_params([](const std::string&, ad::Tensor& t) { t.fill(0.0); });
  b.ff.visit_params("ff", [](const std::string&, ad::Tensor& t) { t.fill(0.0); });
  for (auto& g : b.ssm.groups) g.log_step.fill(-1.0);
}

}  // namespace

TEST(BatchNorm, StandardizesAndHasNoParameters) {
  Rng rng(1);
  BatchNorm bn(3);
  ad::Tape tape;
  ad::Tensor x = random_tensor({40, 3}, rng, 2.0);
  for (std::size_t r = 0; r < 40; ++r) x.at(r, 2) = 5.0;  // constant channel
  const ad::Tensor y = batchnorm_no_affine(tape.constant(x), bn, true).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < 40; ++r) m += y.at(r, c) / 40;
    for (std::size_t r = 0; r < 40; ++r) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 40;
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
  for (std::size_t r = 0; r < 40; ++r) EXPECT_EQ(y.at(r, 2), 0.0);
  EXPECT_NEAR(bn.running_mean[2], 0.5, 1e-12);

  ad::ParamBinder bind(tape);
  Block b{tides::ssm::SsmLayer::init(small_config().ssm_config(), rng), BatchNorm(4), make_glu_ff(4, 4, rng)};
  std::size_t n = 0;
  b.ssm.visit_params([&](const std::string&, ad::Tensor&) { ++n; });
  b.ff.visit_params("ff", [&](const std::string&, ad::Tensor&) { ++n; });
  EXPECT_GT(n, 0u);
  EXPECT_THROW(batchnorm_no_affine(tape.constant(ad::Tensor({1, 3})), bn, true), std::invalid_argument);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  BatchNorm bn(1);
  bn.running_mean[0] = 2.0;
  bn.running_var[0] = 4.0 - bn.eps;
  ad::Tape tape;
  const ad::Tensor y = batchnorm_no_affine(tape.constant(ad::Tensor::matrix(2, 1, {4.0, 0.0})), bn, false).value();
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], -1.0, 1e-15);
}

TEST(GluFeedForward, MatchesMatrixOracle) {
  Rng rng(2);
  GluFeedForward ff = make_glu_ff(3, 5, rng);
  ff.b1 = random_tensor({5}, rng);
  ff.b2 = random_tensor({5}, rng);
  ff.b_out = random_tensor({3}, rng);
  const ad::Tensor x = random_tensor({4, 3}, rng);
  ad::Tape tape;
  ad::ParamBinder bind(tape);
  const ad::Tensor y = glu_ff(bind, ff, tape.constant(x)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> mid(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double a = ff.b1[j], g = ff.b2[j];
      for (std::size_t i = 0; i < 3; ++i) {
        a += x.at(r, i) * ff.w1.at(i, j);
        g += x.at(r, i) * ff.w2.at(i, j);
      }
      mid[j] = a / (1.0 + std::exp(-g));
    }
    for (std::size_t o = 0; o < 3; ++o) {
      double want = ff.b_out[o];
      for (std::size_t j = 0; j < 5; ++j) want += mid[j] * ff.w_out.at(j, o);
      EXPECT_NEAR(y.at(r, o), want, 1e-12);
    }
  }
}

TEST(GluFeedForward, SaturatedGateAndZeroBranch) {
  Rng rng(3);
  GluFeedForward ff = make_glu_ff(3, 4, rng);
  ff.b2.fill(60.0);
  const ad::Tensor x = random_tensor({2, 3}, rng);
  ad::Tape tape;
  ad::ParamBinder bind(tape);
  ad::Var xv = tape.constant(x);
  const ad::Tensor sat = glu_ff(bind, ff, xv).value();
  const ad::Tensor lin = ad::matmul(ad::matmul(xv, bind(ff.w1)), bind(ff.w_out)).value();
  EXPECT_LT(tides::testing::max_abs_diff(sat.vec(), lin.vec()), 1e-12);

  GluFeedForward zero = ff;
  zero.w1.fill(0.0);
  ad::ParamBinder bind2(tape);
  for (double v : glu_ff(bind2, zero, xv).value().vec()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(glu_ff(bind2, zero, tape.constant(ad::Tensor({2, 2}))), std::invalid_argument);
  EXPECT_EQ(ff_inner_width(10, 1.5), 15u);
  EXPECT_THROW(ff_inner_width(1, 0.1), std::invalid_argument);
}

TEST(Block, ZeroWeightsGiveIdentity) {
  Rng rng(4);
  Model m = Model::init(small_config(), rng);
  Block& b = m.blocks[0];
  zero_all(b);
  const ad::Tensor x = random_tensor({12, 4}, rng);
  for (bool training : {false, true}) {
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    ForwardContext ctx{training, &rng, nullptr};
    const ad::Tensor z =
        block_forward(bind, b, tape.constant(x), tape.constant(steps(12, rng)), 6, 0.0, ctx).value();
    EXPECT_LT(tides::testing::max_abs_diff(z.vec(), x.vec()), 1e-12);
  }
}

TEST(Block, ExecutionOrderIsObservable) {
  Rng rng(5);
  Model m = Model::init(small_config(), rng);
  std::vector<std::string> log;
  ad::Tape tape;
  ad::ParamBinder bind(tape);
  ForwardContext ctx{true, &rng, &log};
  block_forward(bind, m.blocks[0], tape.constant(random_tensor({12, 4}, rng)), tape.constant(steps(12, rng)), 6, 0.2,
                ctx);
  EXPECT_EQ(log, (std::vector<std::string>{"BN", "SSM", "GELU", "Dropout", "GLU", "Dropout", "residual-add"}));
}

TEST(Block, DropoutIsIdentityInEvalAndSeededInTraining) {
  Rng rng(6);
  ModelConfig c = small_config();
  c.drop_rate = 0.3;
  Model m = Model::init(c, rng);
  const ad::Tensor x = random_tensor({12, 4}, rng), d = steps(12, rng);
  auto pass = [&](bool training, std::uint64_t seed) {
    Rng drng(seed);
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    Block b = m.blocks[0];
    return block_forward(bind, b, tape.constant(x), tape.constant(d), 6, c.drop_rate, {training, &drng, nullptr})
        .value();
  };
  EXPECT_EQ(pass(false, 1), pass(false, 2));
  EXPECT_EQ(pass(true, 7), pass(true, 7));
  EXPECT_NE(pass(true, 7), pass(true, 8));

  Rng a(9), b(9);
  ad::Tape tape;
  ad::Var ones = tape.constant(ad::Tensor({1000}, 1.0));
  const ad::Tensor m1 = dropout(ones, 0.3, true, &a).value(), m2 = dropout(ones, 0.3, true, &b).value();
  EXPECT_EQ(m1, m2);
  std::size_t dropped = 0;
  for (double v : m1.vec()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-15);
    dropped += v == 0.0;
  }
  EXPECT_NEAR(static_cast<double>(dropped) / 1000, 0.3, 0.05);
}

TEST(Model, TrainingFlagOnlyTouchesDropoutAndNorm) {
  Rng rng(7);
  ModelConfig c = small_config();
  c.layers = 0;
  c.encoder_depth = 2;
  c.drop_rate = 0.5;
  Model m = Model::init(c, rng);
  const ad::Tensor u = random_tensor({12, 3}, rng), d = steps(12, rng);
  auto pass = [&](bool training) {
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    Rng drng(1);
    return model_forward(bind, m, tape.constant(u), tape.constant(d), 6, {training, &drng, nullptr}).value();
  };
  EXPECT_EQ(pass(true), pass(false));
}

TEST(Model, ShapesAndDegenerateStack) {
  Rng rng(8);
  ModelConfig c = small_config();
  Model m = Model::init(c, rng);
  const ad::Tensor u = random_tensor({12, 3}, rng), d = steps(12, rng);
  {
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    EXPECT_EQ(model_forward(bind, m, tape.constant(u), tape.constant(d), 6).shape(), (ad::Shape{2, 3}));
  }
  c.task = Task::regression;
  c.output_dim = 1;
  c.layers = 0;
  c.encoder_depth = 1;
  Model r = Model::init(c, rng);
  ad::Tape tape;
  ad::ParamBinder bind(tape);
  const ad::Tensor y = model_forward(bind, r, tape.constant(u), tape.constant(d), 6).value();
  EXPECT_EQ(y.shape(), (ad::Shape{12, 1}));
  ad::Var enc = tides::ssm::apply_glu_blocks(bind, r.encoder.blocks, tape.constant(u));
  const ad::Tensor want =
      ad::add(ad::matmul(ad::matmul(enc, bind(r.encoder.w_out)), bind(r.head_w)), bind(r.head_b)).value();
  EXPECT_EQ(y, want);
}

TEST(Model, ParameterCountMatchesFormula) {
  Rng rng(9);
  std::vector<ModelConfig> configs;
  ModelConfig c = small_config();
  configs.push_back(c);
  c.bidirectional = true;
  c.encoder_depth = 2;
  c.lambda_depth = 1;
  c.selectivity.lambda_im = true;
  c.ff_mult = 1.5;
  configs.push_back(c);
  c.complex_state = false;
  c.selectivity.lambda_im = false;
  c.delta_mode = tides::ssm::DeltaMode::learned_gate;
  c.ssm_b = 2;
  c.ssm_mult = 3;
  configs.push_back(c);
  c.selectivity = {};
  configs.push_back(c);
  for (const ModelConfig& cfg : configs) {
    Model m = Model::init(cfg, rng);
    EXPECT_EQ(m.parameter_count(), analytic_parameter_count(cfg));
  }
}

TEST(Model, GradientCheckTwoLayers) {
  Rng rng(10);
  ModelConfig c;
  c.input_dim = 2;
  c.hidden = 8;
  c.layers = 2;
  c.ssm_mult = 8;
  c.bc_rank = 2;
  c.selectivity = {true, false, true};
  c.output_dim = 3;
  c.encoder_depth = 1;
  c.lambda_depth = 1;
  Model m = Model::init(c, rng);
  for (Block& b : m.blocks) {
    for (auto& g : b.ssm.groups) {
      *g.lambda_re.w_full = random_tensor(g.lambda_re.w_full->shape(), rng, 0.3);
      *g.b.w_up = random_tensor(g.b.w_up->shape(), rng, 0.3);
      *g.c.w_up = random_tensor(g.c.w_up->shape(), rng, 0.3);
      for (double& v : g.log_step.data()) v = rng.uniform(-1.0, 0.5);
    }
  }
  const ad::Tensor u = random_tensor({12, 2}, rng), d = steps(12, rng);
  std::vector<ad::Tensor*> params;
  m.visit_params([&](const std::string&, ad::Tensor& t) { params.push_back(&t); });
  auto r = tides::testing::check_params(params, [&](ad::ParamBinder& bind) {
    ad::Tape& tape = bind.tape();
    ad::Var logits = model_forward(bind, m, tape.constant(u), tape.constant(d), 4, {true, nullptr, nullptr});
    return ad::cross_entropy(logits, {0, 2, 1});
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << "index " << r.worst_index << " analytic " << r.analytic << " numeric "
                                   << r.numeric;
}
