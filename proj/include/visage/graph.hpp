#ifndef VISAGE_GRAPH_HPP
#define VISAGE_GRAPH_HPP

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "visage/tensor.hpp"

namespace visage {

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
};

/// Define-by-run reverse-mode autodiff tape.
///
/// Every op records its output eagerly, so node order is already
/// topological: inputs always precede the nodes that consume them. A Graph
/// instance is single-threaded; one forward build, then backward().
class Graph {
 public:
  /// Constant leaf; no gradient is tracked through it.
  NodeId input(Tensor value);
  /// Trainable leaf; backward() fills its gradient (zeros if unreachable).
  NodeId parameter(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  /// x[m x n] + bias[n] broadcast over rows.
  NodeId add_row_bias(NodeId x, NodeId bias);
  /// Cross-correlation + per-channel bias. x is [C,H,W] or [B,C,H,W],
  /// kernels [OC,IC,K,K], bias [OC].
  NodeId conv2d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding);
  NodeId maxpool2d(NodeId x, int k, int stride);
  NodeId relu(NodeId x);
  /// Softmax over the last axis; x is [n] or [B,n]. Max-subtracted.
  NodeId softmax(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  NodeId square(NodeId x);
  NodeId sum(NodeId x);

  /// Mean squared error against a constant target of the same shape.
  NodeId mse_loss(NodeId pred, const Tensor& target);
  /// Mean negative log-probability of the target class; probs is
  /// [B,classes], rows assumed normalized. Probabilities are clamped to
  /// 1e-12 before the log.
  NodeId cross_entropy_loss(NodeId probs, const std::vector<int>& targets);

  /// Reverse accumulation from a scalar loss. Re-zeroes all gradients
  /// first, so calling it twice is equivalent to calling it once.
  void backward(NodeId loss);

  /// Reference stays valid for the graph's lifetime (node storage never
  /// relocates), so held references survive later op additions.
  const Tensor& value(NodeId id) const { return nodes_[id.index].value; }
  /// Gradient of the last backward() target w.r.t. this node.
  const Tensor& grad(NodeId id) const;
  /// Scalar node value at full accumulation precision (reduction ops keep
  /// the unrounded double alongside the f32 tensor).
  double scalar(NodeId id) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    double exact = 0.0;
    bool has_exact = false;
    bool needs_grad = false;
    bool is_param = false;
    std::function<void(Graph&)> backprop;
  };

  NodeId push(Node node);
  Tensor& grad_buf(NodeId id);
  bool needs_grad(NodeId id) const { return nodes_[id.index].needs_grad; }

  std::deque<Node> nodes_;
};

}  // namespace visage

#endif
