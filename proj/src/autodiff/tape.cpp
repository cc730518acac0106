#include "tides/autodiff/tape.hpp"

#include <stdexcept>

namespace tides::ad {

const Tensor& Var::value() const {
  if (!valid()) throw std::logic_error("Var::value on an unbound handle");
  return tape->value(*this);
}

const Tensor& Gradients::operator[](Var v) const { return at(v.id); }

const Tensor& Gradients::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= grads_.size()) {
    throw std::out_of_range("Gradients: node " + std::to_string(id) + " not on tape");
  }
  Tensor& g = grads_[static_cast<std::size_t>(id)];
  if (!shapes_.empty() && g.shape() != shapes_[static_cast<std::size_t>(id)]) g = Tensor(shapes_[static_cast<std::size_t>(id)]);
  return g;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = requires_grad ? "leaf" : "constant";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::check_owned(Var v, std::string_view context) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument(std::string(context) + ": variable is not on this tape");
  }
}

Var Tape::apply(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  std::vector<const Tensor*> in;
  std::vector<int> ids;
  bool rg = false;
  in.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owned(v, op);
    in.push_back(&nodes_[static_cast<std::size_t>(v.id)].value);
    ids.push_back(v.id);
    rg = rg || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }
  Tensor out = forward(in);
  Node n{std::move(op), std::move(ids), std::move(out), rg, std::move(forward), std::move(backward)};
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "Tape::value");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

void Tape::set_value(Var v, Tensor value) {
  check_owned(v, "Tape::set_value");
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.forward) throw std::logic_error("Tape::set_value: node " + std::to_string(v.id) + " is not a leaf");
  if (n.value.shape() != value.shape()) {
    throw std::invalid_argument("Tape::set_value: shape " + shape_str(value.shape()) + " != " +
                                shape_str(n.value.shape()));
  }
  n.value = std::move(value);
}

void Tape::replay() {
  std::vector<const Tensor*> in;
  for (Node& n : nodes_) {
    if (!n.forward) continue;
    in.clear();
    for (int id : n.inputs) in.push_back(&nodes_[static_cast<std::size_t>(id)].value);
    n.value = n.forward(in);
  }
}

bool Tape::depends_on(int node, int ancestor) const {
  if (node == ancestor) return true;
  if (node < ancestor) return false;
  std::vector<char> seen(static_cast<std::size_t>(node) + 1, 0);
  std::vector<int> stack{node};
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    if (cur == ancestor) return true;
    if (cur < ancestor || seen[static_cast<std::size_t>(cur)]) continue;
    seen[static_cast<std::size_t>(cur)] = 1;
    for (int id : nodes_[static_cast<std::size_t>(cur)].inputs) stack.push_back(id);
  }
  return false;
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this || loss.id < 0 || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw std::invalid_argument("backward: loss is not on this tape");
  }
  const Node& ln = nodes_[static_cast<std::size_t>(loss.id)];
  if (ln.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(ln.value.shape()));
  }

  std::vector<Tensor> grads(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad || static_cast<int>(i) == loss.id) grads[i] = Tensor(nodes_[i].value.shape());
  }
  grads[static_cast<std::size_t>(loss.id)].fill(1.0);

  std::vector<const Tensor*> in;
  std::vector<Tensor*> gin;
  for (int i = loss.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || !n.requires_grad) continue;
    in.clear();
    gin.clear();
    for (int id : n.inputs) {
      in.push_back(&nodes_[static_cast<std::size_t>(id)].value);
      gin.push_back(nodes_[static_cast<std::size_t>(id)].requires_grad ? &grads[static_cast<std::size_t>(id)] : nullptr);
    }
    n.backward(in, n.value, grads[static_cast<std::size_t>(i)], gin);
  }
  // Nodes that never required a gradient report zeros, created on demand.
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& n : nodes_) shapes.push_back(n.value.shape());
  return Gradients(std::move(grads), std::move(shapes));
}

Var ParamBinder::operator()(const Tensor& param) {
  if (auto it = map_.find(&param); it != map_.end()) return it->second;
  Var v = tape_->leaf(param);
  map_.emplace(&param, v);
  order_.emplace_back(&param, v);
  return v;
}

Var ParamBinder::find(const Tensor& param) const {
  auto it = map_.find(&param);
  return it == map_.end() ? Var{} : it->second;
}

}  // namespace tides::ad
