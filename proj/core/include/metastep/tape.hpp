#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metastep/tensor.hpp"

namespace metastep {

using NodeId = int32_t;
inline constexpr NodeId kNoNode = -1;

/// Registered op-set. Every op has a reverse rule expressed in terms of the
/// ops below, so a recorded backward pass is itself a differentiable graph.
/// Heaviside and RowMaxDetached are defined with zero derivative: the first
/// is the relu mask, the second the detached shift that stabilizes
/// log-sum-exp (the shift cancels exactly in the derivative).
enum class Op : uint8_t {
  Leaf,       // differentiable input
  Constant,   // non-differentiable input
  Add,        // elementwise, same shape
  Sub,
  Mul,
  Scale,        // x * scalar
  AddScalar,    // x + scalar
  MatMul,       // (N,K) x (K,M) -> (N,M)
  Transpose,    // (N,M) -> (M,N)
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Square,
  Reciprocal,
  Relu,
  Softplus,
  Heaviside,       // 1 if x > 0 else 0; derivative defined as 0
  Sum,             // any shape -> (1)
  Mean,            // any shape -> (1)
  RowSum,          // (N,M) -> (N,1)
  ColSum,          // (N,M) -> (1,M)
  BroadcastCols,   // (N,1) -> (N,M)
  BroadcastRows,   // (1,M) -> (N,M)
  BroadcastFill,   // (1) -> arbitrary shape
  RowMaxDetached,  // (N,M) -> (N,1); derivative defined as 0
};

/// Append-only evaluation tape. Values are computed eagerly at node
/// creation, in creation order, which makes runs bit-reproducible. backward()
/// appends adjoint nodes built from the same op-set; calling it on a node of
/// an extended tape differentiates through earlier backward passes, which is
/// how Hessian-vector and mixed second-order products are obtained.
class Tape {
 public:
  struct Node {
    Op op;
    NodeId a = kNoNode;
    NodeId b = kNoNode;
    double scalar = 0.0;  // Scale/AddScalar factor; broadcast extent for Broadcast*
    Tensor value;
  };

  NodeId leaf(Tensor v);
  NodeId constant(Tensor v);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId reciprocal(NodeId a);
  NodeId relu(NodeId a);
  NodeId softplus(NodeId a);
  NodeId heaviside(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId rowsum(NodeId a);
  NodeId colsum(NodeId a);
  NodeId broadcast_cols(NodeId a, int64_t m);
  NodeId broadcast_rows(NodeId a, int64_t n);
  NodeId broadcast_fill(NodeId a, const std::vector<int64_t>& shape);
  NodeId rowmax_detached(NodeId a);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  /// Bytes held by node values; the memory proxy reported by the harness.
  size_t byte_size() const { return bytes_; }

  /// Reverse sweep from scalar node `seed_output`. Appends adjoint nodes and
  /// returns, for each entry of `wrt`, the node holding d(seed)/d(entry), or
  /// kNoNode when no differentiable path reaches it.
  std::vector<NodeId> backward(NodeId seed_output, std::span<const NodeId> wrt);

  void reserve(size_t n) { nodes_.reserve(n); }

 private:
  NodeId push(Node n);
  NodeId unary(Op op, NodeId a, Tensor value, double scalar = 0.0);
  const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
  void check_id(NodeId id, const char* who) const;

  std::vector<Node> nodes_;
  size_t bytes_ = 0;
};

}  // namespace metastep
