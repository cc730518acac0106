#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tides/autodiff/tape.hpp"
#include "tides/rng.hpp"
#include "tides/ssm/head.hpp"
#include "tides/ssm/ssm_layer.hpp"

namespace tides::block {

// Affine-free batch normalization over the joint batch-time axis. Holds only
// running statistics for evaluation; nothing here is trained.
struct BatchNorm {
  ad::Tensor running_mean;  // [H]
  ad::Tensor running_var;   // [H]
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNorm(std::size_t channels = 0) : running_mean({channels}), running_var({channels}, 1.0) {}
};

// Training mode normalizes with the batch statistics and folds them into the
// running record (unbiased variance); evaluation mode uses the record.
ad::Var batchnorm_no_affine(ad::Var x, BatchNorm& bn, bool training);

// y = ((x W1 + b1) * sigmoid(x W2 + b2)) W_out + b_out.
struct GluFeedForward {
  ad::Tensor w1, b1;        // [H, F], [F]
  ad::Tensor w2, b2;        // [H, F], [F]
  ad::Tensor w_out, b_out;  // [F, H], [H]

  std::size_t width() const { return w1.shape().at(0); }
  std::size_t inner() const { return w1.shape().at(1); }

  template <class F>
  void visit_params(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
    f(prefix + ".w_out", w_out);
    f(prefix + ".b_out", b_out);
  }
};

std::size_t ff_inner_width(std::size_t hidden, double ff_mult);
GluFeedForward make_glu_ff(std::size_t hidden, std::size_t inner, Rng& rng);
ad::Var glu_ff(ad::ParamBinder& bind, const GluFeedForward& ff, ad::Var x);

// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when not
// training or when p == 0.
ad::Var dropout(ad::Var x, double p, bool training, Rng* rng);

enum class Task { regression, classification };

struct ModelConfig {
  std::size_t input_dim = 1;
  std::size_t hidden = 8;   // H
  std::size_t layers = 1;   // N
  std::size_t encoder_depth = 0;
  std::size_t lambda_depth = 0;
  std::size_t bc_rank = 1;
  std::size_t ssm_b = 1;
  std::size_t ssm_mult = 8;
  bool bidirectional = false;
  ssm::Discretization disc = ssm::Discretization::zoh;
  ssm::Reparam reparam = ssm::Reparam::stable;
  bool clip_eigs = true;
  double drop_rate = 0.0;
  double ff_mult = 1.0;
  ssm::Selectivity selectivity;
  ssm::DeltaMode delta_mode = ssm::DeltaMode::physical;
  bool complex_state = true;
  bool normalize = false;
  ssm::StateReadout readout = ssm::StateReadout::post_update;
  Task task = Task::classification;
  std::size_t output_dim = 2;  // classes, or regression targets per step

  void validate() const;
  ssm::SsmConfig ssm_config() const;
};

struct Block {
  ssm::SsmLayer ssm;
  BatchNorm bn;
  GluFeedForward ff;
};

// Input encoder: residual GLU blocks at the input width, then W_out to H.
struct Encoder {
  std::vector<ssm::GluBlock> blocks;
  ad::Tensor w_out;  // [d_input, H]
};

struct Model {
  ModelConfig config;
  Encoder encoder;
  std::vector<Block> blocks;
  ad::Tensor head_w;  // [H, output_dim]
  ad::Tensor head_b;  // [output_dim]

  static Model init(const ModelConfig& config, Rng& rng);
  std::size_t parameter_count();

  template <class F>
  void visit_params(F&& f) {
    for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
      f("enc.glu" + std::to_string(i) + ".w1", encoder.blocks[i].w1);
      f("enc.glu" + std::to_string(i) + ".w2", encoder.blocks[i].w2);
    }
    f(std::string("enc.w_out"), encoder.w_out);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      blocks[i].ssm.visit_params([&](const std::string& name, ad::Tensor& t) { f(p + ".ssm." + name, t); });
      blocks[i].ff.visit_params(p + ".ff", f);
    }
    f(std::string("head.w"), head_w);
    f(std::string("head.b"), head_b);
  }
};

// Closed-form count for a configuration, independent of any instance.
std::size_t analytic_parameter_count(const ModelConfig& config);
std::size_t analytic_ssm_parameter_count(const ssm::SsmConfig& config, std::size_t lambda_depth);

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;                         // dropout masks; required when training with drop_rate > 0
  std::vector<std::string>* call_log = nullptr;  // sub-layer names in execution order
};

// x: [B*L, H] -> [B*L, H].
ad::Var block_forward(ad::ParamBinder& bind, Block& block, ad::Var x, ad::Var delta, std::size_t seq_len,
                      double drop_rate, const ForwardContext& ctx);

// u: [B*L, d_input], delta: [B*L, 1]. Returns logits [B, k] for
// classification or per-step outputs [B*L, output_dim] for regression.
ad::Var model_forward(ad::ParamBinder& bind, Model& model, ad::Var u, ad::Var delta, std::size_t seq_len,
                      const ForwardContext& ctx = {});

}  // namespace tides::block
