#include "bdlab/graph.hpp"

#include "bdlab/errors.hpp"

namespace bdlab {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::constant(Tensor value) {
  require_finite(value, "graph input");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  require_finite(p.value, "parameter");
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::vector<int> inputs, BackwardFn backward, const char* op) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (int i : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(i)].requires_grad;
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_mut(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw GraphError("loss belongs to a different graph");
  if (backward_done_) throw GraphError("backward already ran on this graph; call reset() before reuse (stale graph)");
  const auto& lv = value(loss.id);
  if (lv.size() != 1) throw ShapeError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
  backward_done_ = true;
  grad_mut(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

void Graph::reset() {
  nodes_.clear();
  backward_done_ = false;
}

}  // namespace bdlab
