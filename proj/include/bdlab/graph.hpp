#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bdlab/tensor.hpp"

namespace bdlab {

// A trainable tensor. Gradients accumulate into `grad` during backward and are
// cleared by the optimizer or by zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Graph;

// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

// Tape of operations recorded in topological (creation) order. Backward walks
// the tape once in reverse; calling it a second time without reset() is an
// error because intermediate gradients would be double-counted.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  // Records an op node; `backward` reads grad(self) and accumulates into the
  // grads of `inputs`. Throws NumericError if the value is not finite.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward, const char* op);

  void backward(Var loss);
  void reset();

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  Tensor& grad_mut(int id);
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // When disabled, op nodes skip gradient bookkeeping (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

}  // namespace bdlab
