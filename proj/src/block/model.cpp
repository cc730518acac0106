#include "tides/block/model.hpp"

#include <cmath>
#include <stdexcept>

#include "tides/autodiff/ops.hpp"

namespace tides::block {

ad::Var batchnorm_no_affine(ad::Var x, BatchNorm& bn, bool training) {
  const ad::Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != bn.running_mean.size()) {
    throw std::invalid_argument("batchnorm: input " + ad::shape_str(xv.shape()) + " for " +
                                std::to_string(bn.running_mean.size()) + " channels");
  }
  const std::size_t n = xv.rows(), c = xv.cols();
  if (training) {
    if (n < 2) throw std::invalid_argument("batchnorm: need at least two batch-time entries");
    for (std::size_t j = 0; j < c; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += xv.at(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (xv.at(i, j) - mean) * (xv.at(i, j) - mean);
      var /= static_cast<double>(n - 1);
      bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean;
      bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var;
    }
    return ad::batchnorm_train(x, bn.eps);
  }
  ad::Tensor shift({c}), scale({c});
  for (std::size_t j = 0; j < c; ++j) {
    shift[j] = -bn.running_mean[j];
    scale[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
  }
  ad::Tape& tape = *x.tape;
  return ad::mul(ad::add(x, tape.constant(shift)), tape.constant(scale));
}

std::size_t ff_inner_width(std::size_t hidden, double ff_mult) {
  const double w = std::round(ff_mult * static_cast<double>(hidden));
  if (!(w >= 1.0)) throw std::invalid_argument("ff_mult * H must round to at least 1");
  return static_cast<std::size_t>(w);
}

GluFeedForward make_glu_ff(std::size_t hidden, std::size_t inner, Rng& rng) {
  const double s_in = 1.0 / std::sqrt(static_cast<double>(hidden));
  const double s_mid = 1.0 / std::sqrt(static_cast<double>(inner));
  return {ssm::gaussian({hidden, inner}, s_in, rng), ad::Tensor({inner}), ssm::gaussian({hidden, inner}, s_in, rng),
          ad::Tensor({inner}),  ssm::gaussian({inner, hidden}, s_mid, rng), ad::Tensor({hidden})};
}

ad::Var glu_ff(ad::ParamBinder& bind, const GluFeedForward& ff, ad::Var x) {
  if (x.value().rank() != 2 || x.value().cols() != ff.width()) {
    throw std::invalid_argument("glu_ff: input " + ad::shape_str(x.shape()) + " for width " +
                                std::to_string(ff.width()));
  }
  ad::Var lin = ad::add(ad::matmul(x, bind(ff.w1)), bind(ff.b1));
  ad::Var gate = ad::sigmoid(ad::add(ad::matmul(x, bind(ff.w2)), bind(ff.b2)));
  return ad::add(ad::matmul(ad::mul(lin, gate), bind(ff.w_out)), bind(ff.b_out));
}

ad::Var dropout(ad::Var x, double p, bool training, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw std::invalid_argument("dropout: training with a nonzero rate needs a generator");
  ad::Tensor mask(x.value().shape());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask.data()) m = rng->uniform() < p ? 0.0 : keep;
  return ad::mul(x, x.tape->constant(std::move(mask)));
}

void ModelConfig::validate() const {
  if (input_dim == 0 || hidden == 0 || output_dim == 0) throw std::invalid_argument("model: zero-width dimension");
  if (ssm_b == 0 || ssm_mult == 0) throw std::invalid_argument("model: ssm_b and ssm_mult must be positive");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw std::invalid_argument("model: drop_rate must lie in [0, 1)");
  ff_inner_width(hidden, ff_mult);
  ssm_config().validate();
}

ssm::SsmConfig ModelConfig::ssm_config() const {
  ssm::SsmConfig c;
  c.input_dim = hidden;
  c.output_dim = hidden;
  c.groups = ssm_b;
  c.group_size = ssm_mult;
  c.complex_state = complex_state;
  c.bidirectional = bidirectional;
  c.disc = disc;
  c.delta_mode = delta_mode;
  c.reparam = reparam;
  c.clip_eigs = clip_eigs;
  c.selectivity = selectivity;
  c.bc_rank = bc_rank;
  c.lambda_depth = lambda_depth;
  c.normalize = normalize;
  c.readout = readout;
  return c;
}

Model Model::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model m;
  m.config = config;
  Rng erng = rng.split("encoder");
  const double s_in = 1.0 / std::sqrt(static_cast<double>(config.input_dim));
  for (std::size_t i = 0; i < config.encoder_depth; ++i) {
    m.encoder.blocks.push_back({ssm::gaussian({config.input_dim, config.input_dim}, s_in, erng),
                                ssm::gaussian({config.input_dim, config.input_dim}, s_in, erng)});
  }
  m.encoder.w_out = ssm::gaussian({config.input_dim, config.hidden}, s_in, erng);
  const std::size_t inner = ff_inner_width(config.hidden, config.ff_mult);
  for (std::size_t i = 0; i < config.layers; ++i) {
    Rng brng = rng.split("block" + std::to_string(i));
    Rng srng = brng.split("ssm"), frng = brng.split("ff");
    m.blocks.push_back({ssm::SsmLayer::init(config.ssm_config(), srng), BatchNorm(config.hidden),
                        make_glu_ff(config.hidden, inner, frng)});
  }
  Rng hrng = rng.split("head");
  m.head_w = ssm::gaussian({config.hidden, config.output_dim}, 1.0 / std::sqrt(static_cast<double>(config.hidden)),
                           hrng);
  m.head_b = ad::Tensor({config.output_dim});
  return m;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  visit_params([&n](const std::string&, ad::Tensor& t) { n += t.size(); });
  return n;
}

std::size_t analytic_ssm_parameter_count(const ssm::SsmConfig& c, std::size_t lambda_depth) {
  const std::size_t h = c.input_dim, o = c.output_dim, m = c.group_size, r = c.bc_rank;
  const std::size_t q = c.complex_state ? 2 * m : m;
  const std::size_t cw = (c.complex_state ? 2 : 1) * m * c.directions();
  const std::size_t lambda_head = h * m + lambda_depth * 2 * h * h;
  std::size_t per_group = m + (c.selectivity.lambda_re ? lambda_head : 0);
  if (c.complex_state) per_group += m + (c.selectivity.lambda_im ? lambda_head : 0);
  per_group += c.delta_mode == ssm::DeltaMode::physical ? m : (h + 1) * m + m;
  per_group += q * h + o * cw;
  if (c.selectivity.bc) per_group += (h * r + r * q * h) + (h * r + r * o * cw);
  const std::size_t d = o == h ? h : h * o;
  return c.groups * per_group + d;
}

std::size_t analytic_parameter_count(const ModelConfig& c) {
  const std::size_t h = c.hidden, f = ff_inner_width(h, c.ff_mult);
  const std::size_t encoder = c.encoder_depth * 2 * c.input_dim * c.input_dim + c.input_dim * h;
  const std::size_t ff = 2 * (h * f + f) + f * h + h;
  const std::size_t block = analytic_ssm_parameter_count(c.ssm_config(), c.lambda_depth) + ff;
  return encoder + c.layers * block + h * c.output_dim + c.output_dim;
}

namespace {

void log_call(const ForwardContext& ctx, const char* name) {
  if (ctx.call_log) ctx.call_log->emplace_back(name);
}

}  // namespace

ad::Var block_forward(ad::ParamBinder& bind, Block& block, ad::Var x, ad::Var delta, std::size_t seq_len,
                      double drop_rate, const ForwardContext& ctx) {
  log_call(ctx, "BN");
  ad::Var z = batchnorm_no_affine(x, block.bn, ctx.training);
  log_call(ctx, "SSM");
  z = ssm::ssm_forward(bind, block.ssm, z, delta, seq_len);
  log_call(ctx, "GELU");
  z = ad::gelu(z);
  log_call(ctx, "Dropout");
  z = dropout(z, drop_rate, ctx.training, ctx.rng);
  log_call(ctx, "GLU");
  z = glu_ff(bind, block.ff, z);
  log_call(ctx, "Dropout");
  z = dropout(z, drop_rate, ctx.training, ctx.rng);
  log_call(ctx, "residual-add");
  return ad::add(z, x);
}

ad::Var model_forward(ad::ParamBinder& bind, Model& model, ad::Var u, ad::Var delta, std::size_t seq_len,
                      const ForwardContext& ctx) {
  const ModelConfig& c = model.config;
  if (u.value().rank() != 2 || u.value().cols() != c.input_dim) {
    throw std::invalid_argument("model: input " + ad::shape_str(u.shape()) + ", expected width " +
                                std::to_string(c.input_dim));
  }
  if (seq_len == 0 || u.value().rows() % seq_len != 0) {
    throw std::invalid_argument("model: rows do not split into sequences of " + std::to_string(seq_len));
  }
  ad::Var h = ssm::apply_glu_blocks(bind, model.encoder.blocks, u);
  h = ad::matmul(h, bind(model.encoder.w_out));
  for (Block& b : model.blocks) h = block_forward(bind, b, h, delta, seq_len, c.drop_rate, ctx);
  if (c.task == Task::classification) h = ad::group_mean_rows(h, seq_len);
  return ad::add(ad::matmul(h, bind(model.head_w)), bind(model.head_b));
}

}  // namespace tides::block
