#include "semfsl/autodiff.hpp"

#include "semfsl/errors.hpp"

namespace semfsl {

Parameter::Parameter(std::string name_, Matrix init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      momentum(Matrix::Zero(value.rows(), value.cols())) {}

const Matrix& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw UsageError("scalar() on node of shape " + shape_string(v));
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant_ref(const Matrix& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& param) {
  Node n;
  n.external = &param.value;
  n.param = &param;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (in.valid() && nodes_[in.id()].needs_grad) n.needs_grad = true;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Matrix& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.owned;
}

void Graph::accumulate(Var target, const Matrix& delta) {
  Node& n = nodes_[target.id()];
  if (!n.needs_grad) return;
  n.grad += delta;
}

void Graph::backward(Var root) {
  if (!root.valid() || &root.graph() != this) {
    throw UsageError("backward root belongs to a different graph");
  }
  const Matrix& rv = value(root.id());
  if (rv.size() != 1) {
    throw UsageError("backward requires a scalar root, got shape " + shape_string(rv));
  }
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      const Matrix& v = value(i);
      n.grad.setZero(v.rows(), v.cols());
    }
  }
  if (!nodes_[root.id()].needs_grad) return;
  nodes_[root.id()].grad(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.backward) {
      // Callbacks only touch gradients of earlier nodes, never this one.
      n.backward(*this, n.grad);
    } else if (n.param != nullptr) {
      n.param->grad += n.grad;
    }
  }
}

}  // namespace semfsl
