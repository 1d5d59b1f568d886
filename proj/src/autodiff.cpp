#include "mixnet/autodiff.hpp"

#include "mixnet/error.hpp"

namespace mixnet {

template <typename T>
Var Graph<T>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::variable(TensorT value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_grad_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::record(TensorT value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backward));
}

template <typename T>
Var Graph<T>::record(TensorT value, const std::vector<Var>& parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_grad_) {
    for (Var p : parents) {
      if (p.id >= nodes_.size()) throw UsageError("graph: parent does not belong to this graph");
      n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) {
      n.parents = parents;
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename Graph<T>::TensorT Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
typename Graph<T>::TensorT& Graph<T>::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (!record_grad_) throw UsageError("backward on a graph built without gradient recording");
  if (nodes_.at(root.id).value.size() != 1) throw UsageError("backward requires a single-element output");
  for (auto& n : nodes_) n.grad = TensorT();
  grad_buffer(root)[0] = T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template <typename T>
void Graph<T>::note_branch(std::uint64_t h) {
  branch_signature_ = derive_seed(branch_signature_, h, nodes_.size());
}

template class Graph<float>;
template class Graph<double>;

}  // namespace mixnet
