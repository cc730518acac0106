#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tides/autodiff/tensor.hpp"

namespace tides::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW-style) decay, applied as p -= lr * weight_decay * p.
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update in place. Moments are created lazily on the
// first call and must keep matching the parameter shapes afterwards.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace tides::ad
