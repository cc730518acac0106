#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tides/autodiff/gradcheck.hpp"
#include "tides/autodiff/tape.hpp"
#include "tides/rng.hpp"

namespace tides::testing {

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Builds a scalar loss from leaves holding `inputs`.
using GraphBuilder = std::function<ad::Var(std::vector<ad::Var>&)>;

// Compares tape gradients against central differences over every entry of
// every input tensor.
inline ad::GradCheckResult check_graph(const std::vector<ad::Tensor>& inputs, const GraphBuilder& build,
                                       double h = 1e-5) {
  std::vector<double> flat;
  for (const ad::Tensor& t : inputs) flat.insert(flat.end(), t.vec().begin(), t.vec().end());
  ad::ParamEval eval = [&](std::span<const double> p) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    std::size_t off = 0;
    for (const ad::Tensor& t : inputs) {
      leaves.push_back(tape.leaf(ad::Tensor(t.shape(), std::vector<double>(p.begin() + off, p.begin() + off + t.size()))));
      off += t.size();
    }
    ad::Var loss = build(leaves);
    ad::Gradients g = tape.backward(loss);
    ad::ValueAndGrad out{loss.value().item(), {}};
    for (const ad::Var& v : leaves) out.grad.insert(out.grad.end(), g[v].vec().begin(), g[v].vec().end());
    return out;
  };
  return ad::finite_difference_check(eval, flat, h);
}

inline ad::GradCheckResult check_params(const std::vector<ad::Tensor*>& params,
                                        const std::function<ad::Var(ad::ParamBinder&)>& build, double h = 1e-5) {
  return ad::check_param_gradients(params, build, h);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace tides::testing
