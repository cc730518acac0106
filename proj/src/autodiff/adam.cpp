#include "tides/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tides::ad {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params but " +
                                std::to_string(grads.size()) + " grads");
  }
  if (state.first_moment.empty() && state.step_count == 0) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                                " params, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.first_moment[i].shape()) {
      throw std::invalid_argument("adam_step: param " + std::to_string(i) + " shape " +
                                  shape_str(params[i]->shape()) + ", grad " + shape_str(grads[i].shape()) +
                                  ", moment " + shape_str(state.first_moment[i].shape()));
    }
  }

  const AdamConfig& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p[j]);
    }
  }
}

}  // namespace tides::ad
