#include "metastep/tape.hpp"

#include <cmath>

#include "metastep/errors.hpp"

namespace metastep {

namespace {

double stable_softplus(double x) {
  // log(1 + e^x) without overflow for large |x|
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace

void Tape::check_id(NodeId id, const char* who) const {
  if (id < 0 || id >= size()) throw DimensionMismatch(std::string(who) + ": bad node id");
}

NodeId Tape::push(Node n) {
  bytes_ += n.value.byte_size() + sizeof(Node);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::unary(Op op, NodeId a, Tensor value, double scalar) {
  check_id(a, "tape op");
  return push({op, a, kNoNode, scalar, std::move(value)});
}

NodeId Tape::leaf(Tensor v) { return push({Op::Leaf, kNoNode, kNoNode, 0.0, std::move(v)}); }
NodeId Tape::constant(Tensor v) {
  return push({Op::Constant, kNoNode, kNoNode, 0.0, std::move(v)});
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a, "add");
  check_id(b, "add");
  if (!val(a).same_shape(val(b)))
    throw ShapeMismatch("add: " + val(a).shape_str() + " vs " + val(b).shape_str());
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
  return push({Op::Add, a, b, 0.0, std::move(out)});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_id(a, "sub");
  check_id(b, "sub");
  if (!val(a).same_shape(val(b)))
    throw ShapeMismatch("sub: " + val(a).shape_str() + " vs " + val(b).shape_str());
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
  return push({Op::Sub, a, b, 0.0, std::move(out)});
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_id(a, "mul");
  check_id(b, "mul");
  if (!val(a).same_shape(val(b)))
    throw ShapeMismatch("mul: " + val(a).shape_str() + " vs " + val(b).shape_str());
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
  return push({Op::Mul, a, b, 0.0, std::move(out)});
}

NodeId Tape::scale(NodeId a, double c) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return unary(Op::Scale, a, std::move(out), c);
}

NodeId Tape::add_scalar(NodeId a, double c) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return unary(Op::AddScalar, a, std::move(out), c);
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.shape().size() != 2 || B.shape().size() != 2 || A.cols() != B.rows())
    throw ShapeMismatch("matmul: " + A.shape_str() + " x " + B.shape_str());
  int64_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out({n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t p = 0; p < k; ++p) {
      double aip = A.at(i, p);
      if (aip == 0.0) continue;
      for (int64_t j = 0; j < m; ++j) out.at(i, j) += aip * B.at(p, j);
    }
  return push({Op::MatMul, a, b, 0.0, std::move(out)});
}

NodeId Tape::transpose(NodeId a) {
  const Tensor& A = val(a);
  if (A.shape().size() != 2) throw ShapeMismatch("transpose: rank-2 required");
  Tensor out({A.cols(), A.rows()});
  for (int64_t i = 0; i < A.rows(); ++i)
    for (int64_t j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
  return unary(Op::Transpose, a, std::move(out));
}

NodeId Tape::tanh(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return unary(Op::Tanh, a, std::move(out));
}

NodeId Tape::sigmoid(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
  return unary(Op::Sigmoid, a, std::move(out));
}

NodeId Tape::exp(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return unary(Op::Exp, a, std::move(out));
}

NodeId Tape::log(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return unary(Op::Log, a, std::move(out));
}

NodeId Tape::square(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  return unary(Op::Square, a, std::move(out));
}

NodeId Tape::reciprocal(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / out[i];
  return unary(Op::Reciprocal, a, std::move(out));
}

NodeId Tape::relu(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return unary(Op::Relu, a, std::move(out));
}

NodeId Tape::softplus(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_softplus(out[i]);
  return unary(Op::Softplus, a, std::move(out));
}

NodeId Tape::heaviside(NodeId a) {
  Tensor out = val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? 1.0 : 0.0;
  return unary(Op::Heaviside, a, std::move(out));
}

NodeId Tape::sum(NodeId a) {
  const Tensor& A = val(a);
  double s = 0.0;
  for (int64_t i = 0; i < A.numel(); ++i) s += A[i];
  return unary(Op::Sum, a, Tensor::scalar(s));
}

NodeId Tape::mean(NodeId a) {
  const Tensor& A = val(a);
  double s = 0.0;
  for (int64_t i = 0; i < A.numel(); ++i) s += A[i];
  return unary(Op::Mean, a, Tensor::scalar(s / static_cast<double>(A.numel())));
}

NodeId Tape::rowsum(NodeId a) {
  const Tensor& A = val(a);
  if (A.shape().size() != 2) throw ShapeMismatch("rowsum: rank-2 required");
  Tensor out({A.rows(), 1});
  for (int64_t i = 0; i < A.rows(); ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < A.cols(); ++j) s += A.at(i, j);
    out.at(i, 0) = s;
  }
  return unary(Op::RowSum, a, std::move(out));
}

NodeId Tape::colsum(NodeId a) {
  const Tensor& A = val(a);
  if (A.shape().size() != 2) throw ShapeMismatch("colsum: rank-2 required");
  Tensor out({1, A.cols()});
  for (int64_t j = 0; j < A.cols(); ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < A.rows(); ++i) s += A.at(i, j);
    out.at(0, j) = s;
  }
  return unary(Op::ColSum, a, std::move(out));
}

NodeId Tape::broadcast_cols(NodeId a, int64_t m) {
  const Tensor& A = val(a);
  if (A.shape().size() != 2 || A.cols() != 1) throw ShapeMismatch("broadcast_cols: (N,1) required");
  Tensor out({A.rows(), m});
  for (int64_t i = 0; i < A.rows(); ++i)
    for (int64_t j = 0; j < m; ++j) out.at(i, j) = A.at(i, 0);
  return unary(Op::BroadcastCols, a, std::move(out), static_cast<double>(m));
}

NodeId Tape::broadcast_rows(NodeId a, int64_t n) {
  const Tensor& A = val(a);
  if (A.shape().size() != 2 || A.rows() != 1) throw ShapeMismatch("broadcast_rows: (1,M) required");
  Tensor out({n, A.cols()});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(0, j);
  return unary(Op::BroadcastRows, a, std::move(out), static_cast<double>(n));
}

NodeId Tape::broadcast_fill(NodeId a, const std::vector<int64_t>& shape) {
  const Tensor& A = val(a);
  if (A.numel() != 1) throw ShapeMismatch("broadcast_fill: scalar required");
  return unary(Op::BroadcastFill, a, Tensor::full(shape, A[0]));
}

NodeId Tape::rowmax_detached(NodeId a) {
  const Tensor& A = val(a);
  if (A.shape().size() != 2) throw ShapeMismatch("rowmax_detached: rank-2 required");
  Tensor out({A.rows(), 1});
  for (int64_t i = 0; i < A.rows(); ++i) {
    double m = A.at(i, 0);
    for (int64_t j = 1; j < A.cols(); ++j) m = std::max(m, A.at(i, j));
    out.at(i, 0) = m;
  }
  return unary(Op::RowMaxDetached, a, std::move(out));
}

std::vector<NodeId> Tape::backward(NodeId seed_output, std::span<const NodeId> wrt) {
  check_id(seed_output, "backward");
  if (val(seed_output).numel() != 1)
    throw ShapeMismatch("backward: seed must be a scalar node");

  // A node is relevant when some wrt leaf lies in its parent ancestry;
  // contributions to irrelevant nodes can never reach a requested adjoint,
  // so the sweep skips them instead of materializing dead graph.
  std::vector<char> relevant(static_cast<size_t>(seed_output) + 1, 0);
  for (NodeId w : wrt) {
    check_id(w, "backward wrt");
    if (w <= seed_output) relevant[static_cast<size_t>(w)] = 1;
  }
  for (NodeId i = 0; i <= seed_output; ++i) {
    if (relevant[static_cast<size_t>(i)]) continue;
    const Node& n = nodes_[static_cast<size_t>(i)];
    if ((n.a != kNoNode && relevant[static_cast<size_t>(n.a)]) ||
        (n.b != kNoNode && relevant[static_cast<size_t>(n.b)]))
      relevant[static_cast<size_t>(i)] = 1;
  }

  // adj[i] = node currently accumulating d(seed)/d(node i); kNoNode = no path.
  std::vector<NodeId> adj(static_cast<size_t>(seed_output) + 1, kNoNode);
  if (relevant[static_cast<size_t>(seed_output)])
    adj[static_cast<size_t>(seed_output)] = constant(Tensor::scalar(1.0));

  auto accumulate = [&](NodeId target, NodeId contribution) {
    NodeId& slot = adj[static_cast<size_t>(target)];
    slot = (slot == kNoNode) ? contribution : add(slot, contribution);
  };

  for (NodeId i = seed_output; i >= 0; --i) {
    NodeId gy = adj[static_cast<size_t>(i)];
    if (gy == kNoNode) continue;
    const Node& n = nodes_[static_cast<size_t>(i)];
    bool rel_a = n.a != kNoNode && relevant[static_cast<size_t>(n.a)];
    bool rel_b = n.b != kNoNode && relevant[static_cast<size_t>(n.b)];
    if (!rel_a && !rel_b) continue;
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
      case Op::Heaviside:
      case Op::RowMaxDetached:
        break;  // no parents or zero derivative
      case Op::Add:
        if (rel_a) accumulate(n.a, gy);
        if (rel_b) accumulate(n.b, gy);
        break;
      case Op::Sub:
        if (rel_a) accumulate(n.a, gy);
        if (rel_b) accumulate(n.b, scale(gy, -1.0));
        break;
      case Op::Mul:
        if (rel_a) accumulate(n.a, mul(gy, n.b));
        if (rel_b) accumulate(n.b, mul(gy, n.a));
        break;
      case Op::Scale:
        accumulate(n.a, scale(gy, n.scalar));
        break;
      case Op::AddScalar:
        accumulate(n.a, gy);
        break;
      case Op::MatMul:
        if (rel_a) accumulate(n.a, matmul(gy, transpose(n.b)));
        if (rel_b) accumulate(n.b, matmul(transpose(n.a), gy));
        break;
      case Op::Transpose:
        accumulate(n.a, transpose(gy));
        break;
      case Op::Tanh:
        // d tanh = 1 - y^2
        accumulate(n.a, sub(gy, mul(gy, square(i))));
        break;
      case Op::Sigmoid:
        // d sigmoid = y - y^2
        accumulate(n.a, mul(gy, sub(i, square(i))));
        break;
      case Op::Exp:
        accumulate(n.a, mul(gy, i));
        break;
      case Op::Log:
        accumulate(n.a, mul(gy, reciprocal(n.a)));
        break;
      case Op::Square:
        accumulate(n.a, scale(mul(gy, n.a), 2.0));
        break;
      case Op::Reciprocal:
        accumulate(n.a, scale(mul(gy, square(i)), -1.0));
        break;
      case Op::Relu:
        accumulate(n.a, mul(gy, heaviside(n.a)));
        break;
      case Op::Softplus:
        accumulate(n.a, mul(gy, sigmoid(n.a)));
        break;
      case Op::Sum:
        accumulate(n.a, broadcast_fill(gy, val(n.a).shape()));
        break;
      case Op::Mean:
        accumulate(n.a, scale(broadcast_fill(gy, val(n.a).shape()),
                              1.0 / static_cast<double>(val(n.a).numel())));
        break;
      case Op::RowSum:
        accumulate(n.a, broadcast_cols(gy, val(n.a).cols()));
        break;
      case Op::ColSum:
        accumulate(n.a, broadcast_rows(gy, val(n.a).rows()));
        break;
      case Op::BroadcastCols:
        accumulate(n.a, rowsum(gy));
        break;
      case Op::BroadcastRows:
        accumulate(n.a, colsum(gy));
        break;
      case Op::BroadcastFill:
        accumulate(n.a, sum(gy));
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    out.push_back(w <= seed_output ? adj[static_cast<size_t>(w)] : kNoNode);
  }
  return out;
}

}  // namespace metastep
