#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <vector>

#include "mixnet/tensor.hpp"

namespace mixnet {

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

/// Reverse-mode tape. Nodes are appended in creation order, so the node index
/// is a topological order and backward() is a single reverse sweep.
///
/// A graph built with record_grad == false stores values only; ops skip their
/// backward closures, which is what inference uses.
template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;
  /// Receives the gradient of the node's output; accumulates into parents.
  using BackwardFn = std::function<void(Graph&, const TensorT& grad_out)>;

  explicit Graph(bool record_grad = true) : record_grad_(record_grad) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(TensorT value);
  Var variable(TensorT value);
  Var record(TensorT value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(TensorT value, const std::vector<Var>& parents, BackwardFn backward);

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool recording() const { return record_grad_; }

  /// Gradient reached by the last backward(); an all-zero tensor if none.
  TensorT grad(Var v) const;
  /// Lazily allocated accumulation buffer; used by backward rules.
  TensorT& grad_buffer(Var v);

  /// Runs the reverse sweep from a single-element node.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  /// Branch-signature tracking: piecewise ops (relu, max pooling) fold their
  /// selection pattern into a running hash when enabled. The gradient checker
  /// uses it to detect finite-difference stencils that straddle a kink.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void note_branch(std::uint64_t h);
  std::uint64_t branch_signature() const { return branch_signature_; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_grad_;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 0;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mixnet
