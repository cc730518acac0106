#include "tides/autodiff/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tides::ad {

GradCheckResult finite_difference_check(const ParamEval& eval, std::span<const double> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  std::vector<double> x(params.begin(), params.end());
  const ValueAndGrad base = eval(x);
  if (!std::isfinite(base.value)) throw std::domain_error("finite_difference_check: non-finite evaluation at base point");
  if (base.grad.size() != x.size()) {
    throw std::invalid_argument("finite_difference_check: gradient has " + std::to_string(base.grad.size()) +
                                " entries for " + std::to_string(x.size()) + " params");
  }

  GradCheckResult res;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = eval(x).value;
    x[i] = orig - h;
    const double fm = eval(x).value;
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_difference_check: non-finite evaluation perturbing param " + std::to_string(i));
    }
    const double num = (fp - fm) / (2.0 * h);
    const double a = base.grad[i];
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-12});
    if (i == 0 || rel > res.max_rel_error) res = {rel, i, a, num};
  }
  return res;
}

GradCheckResult check_param_gradients(const std::vector<Tensor*>& params, const std::function<Var(ParamBinder&)>& build,
                                      double h) {
  std::vector<double> flat;
  for (const Tensor* t : params) flat.insert(flat.end(), t->vec().begin(), t->vec().end());
  const std::vector<double> original = flat;
  auto load = [&](std::span<const double> p) {
    std::size_t off = 0;
    for (Tensor* t : params) {
      std::copy(p.begin() + off, p.begin() + off + t->size(), t->data().begin());
      off += t->size();
    }
  };
  ParamEval eval = [&](std::span<const double> p) {
    load(p);
    Tape tape;
    ParamBinder bind(tape);
    Var loss = build(bind);
    Gradients g = tape.backward(loss);
    ValueAndGrad out{loss.value().item(), {}};
    for (const Tensor* t : params) {
      Var v = bind.find(*t);
      if (v.valid()) {
        out.grad.insert(out.grad.end(), g[v].vec().begin(), g[v].vec().end());
      } else {
        out.grad.insert(out.grad.end(), t->size(), 0.0);
      }
    }
    return out;
  };
  GradCheckResult r = finite_difference_check(eval, flat, h);
  load(original);
  return r;
}

}  // namespace tides::ad
