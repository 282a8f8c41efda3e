#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "semfsl/tensor.hpp"

namespace semfsl {

// A trainable tensor with its gradient accumulator and momentum buffer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix init);

  void zero_grad() { grad.setZero(); }

  std::string name;
  Matrix value;
  Matrix grad;
  Matrix momentum;
};

class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; valid while the
// graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  // Convenience for 1x1 nodes.
  double scalar() const;

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape over dense matrices. Operations append nodes in
// creation order, which is a topological order, so backward is a single
// reverse sweep.
class Graph {
 public:
  // Called during the reverse sweep with the node's upstream gradient;
  // adds contributions to input nodes through accumulate().
  using BackwardFn = std::function<void(Graph&, const Matrix& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // Non-owning constant; `value` must outlive the graph.
  Var constant_ref(const Matrix& value);
  // Differentiable leaf; backward() adds into param.grad.
  Var parameter(Parameter& param);

  // Appends an op node. `inputs` decide whether the node needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);

  // Reverse sweep from a 1x1 root. Node gradients are recomputed from
  // scratch each call; parameter gradients accumulate.
  void backward(Var root);

  const Matrix& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  void accumulate(Var target, const Matrix& delta);
  // Gradient of a node after backward(); zero-sized if it never needed one.
  const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
};

}  // namespace semfsl
