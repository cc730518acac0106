#include "tides/ssm/head.hpp"

#include <cmath>
#include <stdexcept>

#include "tides/autodiff/ops.hpp"

namespace tides::ssm {

std::string_view to_string(HeadTarget t) {
  switch (t) {
    case HeadTarget::lambda_re: return "lambda_re";
    case HeadTarget::lambda_im: return "lambda_im";
    case HeadTarget::b: return "B";
    case HeadTarget::c: return "C";
  }
  return "?";
}

std::size_t SelectivityHead::in_dim() const {
  if (w_full) return w_full->shape()[0];
  if (w_down) return w_down->shape()[0];
  return 0;
}

std::size_t SelectivityHead::rank() const { return w_down ? w_down->shape()[1] : 0; }

void SelectivityHead::validate() const {
  const std::string name(to_string(target));
  const bool lambda = target == HeadTarget::lambda_re || target == HeadTarget::lambda_im;
  if (bias.rank() != 1) throw std::invalid_argument("head " + name + ": bias must be 1-D");
  if (w_full.has_value() && (w_down.has_value() || w_up.has_value())) {
    throw std::invalid_argument("head " + name + ": both dense and factored weights present");
  }
  if (w_down.has_value() != w_up.has_value()) {
    throw std::invalid_argument("head " + name + ": factored weights must come in pairs");
  }
  if (lambda && w_down) throw std::invalid_argument("head " + name + ": lambda heads are dense");
  if (!lambda && w_full) throw std::invalid_argument("head " + name + ": B/C heads are factored");
  if (w_full && (w_full->rank() != 2 || w_full->shape()[1] != out_dim())) {
    throw std::invalid_argument("head " + name + ": weight shape " + ad::shape_str(w_full->shape()));
  }
  if (w_down && (w_down->rank() != 2 || w_up->rank() != 2 || w_down->shape()[1] != w_up->shape()[0] ||
                 w_up->shape()[1] != out_dim())) {
    throw std::invalid_argument("head " + name + ": factor shapes " + ad::shape_str(w_down->shape()) + " x " +
                                ad::shape_str(w_up->shape()));
  }
  for (const GluBlock& b : blocks) {
    if (b.w1.shape() != ad::Shape{in_dim(), in_dim()} || b.w2.shape() != b.w1.shape()) {
      throw std::invalid_argument("head " + name + ": GLU block shape " + ad::shape_str(b.w1.shape()));
    }
  }
}

ad::Tensor gaussian(ad::Shape shape, double stddev, Rng& rng) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

SelectivityHead make_head(const HeadSpec& spec, ad::Tensor bias, Rng& rng) {
  SelectivityHead h;
  h.target = spec.target;
  h.bias = std::move(bias);
  h.normalize = spec.normalize;
  h.norm_entries = spec.norm_entries;
  if (spec.selective) {
    const std::size_t out = h.bias.size();
    const double s = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
    for (std::size_t i = 0; i < spec.depth; ++i) {
      h.blocks.push_back({gaussian({spec.in_dim, spec.in_dim}, s, rng), gaussian({spec.in_dim, spec.in_dim}, s, rng)});
    }
    if (spec.rank == 0) {
      h.w_full = ad::Tensor({spec.in_dim, out});
    } else {
      h.w_down = gaussian({spec.in_dim, spec.rank}, s, rng);
      h.w_up = ad::Tensor({spec.rank, out});
    }
  }
  h.validate();
  return h;
}

ad::Var apply_glu_blocks(ad::ParamBinder& bind, std::span<const GluBlock> blocks, ad::Var x) {
  for (const GluBlock& b : blocks) {
    ad::Var lin = ad::matmul(x, bind(b.w1));
    ad::Var gate = ad::sigmoid(ad::matmul(x, bind(b.w2)));
    x = ad::add(x, ad::mul(lin, gate));
  }
  return x;
}

ad::Var apply_head(ad::ParamBinder& bind, const SelectivityHead& head, ad::Var u) {
  ad::Var bias = bind(head.bias);
  if (!head.selective()) return ad::broadcast_rows(bias, u.value().rows());
  if (u.value().rank() != 2 || u.value().cols() != head.in_dim()) {
    throw std::invalid_argument("head " + std::string(to_string(head.target)) + ": input shape " +
                                ad::shape_str(u.shape()) + ", expected width " + std::to_string(head.in_dim()));
  }
  ad::Var g = apply_glu_blocks(bind, head.blocks, u);
  ad::Var delta = head.w_full ? ad::matmul(g, bind(*head.w_full))
                              : ad::matmul(ad::matmul(g, bind(*head.w_down)), bind(*head.w_up));
  if (head.normalize) delta = ad::rms_normalize(delta, head.norm_entries, 1e-8);
  return ad::add(delta, bias);
}

std::vector<double> apply_head(const SelectivityHead& head, std::span<const double> u) {
  ad::Tape tape;
  ad::ParamBinder bind(tape);
  const std::size_t w = head.selective() ? head.in_dim() : u.size();
  if (u.size() != w) {
    throw std::invalid_argument("head " + std::string(to_string(head.target)) + ": input length " +
                                std::to_string(u.size()) + ", expected " + std::to_string(w));
  }
  ad::Var x = tape.constant(ad::Tensor({1, u.size()}, std::vector<double>(u.begin(), u.end())));
  return apply_head(bind, head, x).value().vec();
}

}  // namespace tides::ssm
