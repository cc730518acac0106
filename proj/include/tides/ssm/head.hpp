#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tides/autodiff/tape.hpp"
#include "tides/rng.hpp"

namespace tides::ssm {

enum class HeadTarget { lambda_re, lambda_im, b, c };

std::string_view to_string(HeadTarget t);

// Residual gated-linear block b(x) = x + (x W1) * sigmoid(x W2).
struct GluBlock {
  ad::Tensor w1;  // [width, width]
  ad::Tensor w2;  // [width, width]
};

// Produces one per-step SSM quantity from the step input:
//   value(u) = bias + W g(u),   g = b_d o ... o b_1,
// with W dense (lambda heads) or factored as w_down * w_up (B and C heads).
// When `normalize` is set, W g(u) is RMS-normalized before the bias is added.
struct SelectivityHead {
  HeadTarget target = HeadTarget::lambda_re;
  ad::Tensor bias;                    // [out]
  std::optional<ad::Tensor> w_full;   // [in, out]
  std::optional<ad::Tensor> w_down;   // [in, rank]
  std::optional<ad::Tensor> w_up;     // [rank, out]
  std::vector<GluBlock> blocks;
  bool normalize = false;
  // Number of (possibly complex) values the output row represents; divisor of
  // the mean square in the RMS normalization.
  std::size_t norm_entries = 1;

  bool selective() const noexcept { return w_full.has_value() || w_down.has_value(); }
  std::size_t out_dim() const noexcept { return bias.size(); }
  std::size_t in_dim() const;
  std::size_t rank() const;
  void validate() const;

  template <class F>
  void visit_params(const std::string& prefix, F&& f) {
    f(prefix + ".bias", bias);
    if (w_full) f(prefix + ".w", *w_full);
    if (w_down) f(prefix + ".w_down", *w_down);
    if (w_up) f(prefix + ".w_up", *w_up);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      f(prefix + ".glu" + std::to_string(i) + ".w1", blocks[i].w1);
      f(prefix + ".glu" + std::to_string(i) + ".w2", blocks[i].w2);
    }
  }
};

struct HeadSpec {
  HeadTarget target = HeadTarget::lambda_re;
  std::size_t in_dim = 1;
  bool selective = false;
  // 0 selects a dense projection; otherwise the factored rank.
  std::size_t rank = 0;
  std::size_t depth = 0;
  bool normalize = false;
  std::size_t norm_entries = 1;
};

// Projection weights start at zero (w_full, w_up) so value(u) == bias; w_down
// and GLU weights are Gaussian with std 1/sqrt(fan_in).
SelectivityHead make_head(const HeadSpec& spec, ad::Tensor bias, Rng& rng);

// Rows of u [N, in] -> [N, out].
ad::Var apply_head(ad::ParamBinder& bind, const SelectivityHead& head, ad::Var u);
// Single step evaluation.
std::vector<double> apply_head(const SelectivityHead& head, std::span<const double> u);

// Residual GLU chain shared by heads and encoders.
ad::Var apply_glu_blocks(ad::ParamBinder& bind, std::span<const GluBlock> blocks, ad::Var x);

ad::Tensor gaussian(ad::Shape shape, double stddev, Rng& rng);

}  // namespace tides::ssm
