#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tides/autodiff/tensor.hpp"

namespace tides::ad {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const noexcept { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  // Entries left empty are materialized as zeros of the matching shape on
  // first access.
  Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes) : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  // Gradient for any node on the tape; zeros when the loss does not depend on it.
  const Tensor& operator[](Var v) const;
  const Tensor& at(int id) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  mutable std::vector<Tensor> grads_;
  std::vector<Shape> shapes_;
};

// Ordered record of primitive applications. Node operands always precede the
// node itself, so a single reverse sweep computes every gradient.
class Tape {
 public:
  using Inputs = std::span<const Tensor* const>;
  using ForwardFn = std::function<Tensor(Inputs)>;
  // Accumulate (+=) into the non-null entries of grad_in.
  using BackwardFn =
      std::function<void(Inputs in, const Tensor& out, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var apply(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  std::string_view op(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  const std::vector<int>& operands(int id) const { return nodes_.at(static_cast<std::size_t>(id)).inputs; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Replace a leaf's value (shape must be unchanged); call replay() afterwards.
  void set_value(Var leaf, Tensor value);
  // Recompute every non-leaf node from its operands, in recorded order.
  void replay();
  // True when `ancestor` is reachable from `node` through operand edges.
  bool depends_on(int node, int ancestor) const;

  Gradients backward(Var loss) const;

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor value;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  void check_owned(Var v, std::string_view context) const;

  std::vector<Node> nodes_;
};

// Maps parameter tensors to tape leaves, creating each leaf on first use.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(&tape) {}

  Tape& tape() const noexcept { return *tape_; }
  Var operator()(const Tensor& param);
  // Leaf for a tensor that was bound earlier, or an invalid Var.
  Var find(const Tensor& param) const;
  const std::vector<std::pair<const Tensor*, Var>>& bound() const noexcept { return order_; }

 private:
  Tape* tape_;
  std::unordered_map<const Tensor*, Var> map_;
  std::vector<std::pair<const Tensor*, Var>> order_;
};

}  // namespace tides::ad
