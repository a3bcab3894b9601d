#include "metastep/engine.hpp"

#include <cmath>

#include "metastep/errors.hpp"

namespace metastep {

namespace {

BoundParams bind_group(Tape& tape, const ParamGroup& group) {
  BoundParams bound;
  bound.group = &group;
  bound.ids.reserve(static_cast<size_t>(group.size()));
  for (int64_t i = 0; i < group.size(); ++i) bound.ids.push_back(tape.leaf(group.tensor(i)));
  return bound;
}

/// Read adjoint nodes into one flat vector; entries without a path are zero.
Tensor gather_flat(const Tape& tape, const std::vector<NodeId>& adjoints,
                   const ParamGroup& layout) {
  Tensor flat({std::max<int64_t>(layout.flat_len(), 1)});
  for (int64_t i = 0; i < layout.size(); ++i) {
    NodeId id = adjoints[static_cast<size_t>(i)];
    if (id == kNoNode) continue;
    const Tensor& v = tape.value(id);
    int64_t off = layout.offset(i);
    for (int64_t k = 0; k < v.numel(); ++k) flat[off + k] = v[k];
  }
  return flat;
}

/// Split a flat vector into constants shaped like the group entries.
std::vector<NodeId> split_constants(Tape& tape, const Tensor& flat, const ParamGroup& layout) {
  if (flat.numel() != layout.flat_len())
    throw DimensionMismatch("second-order product: vector length " +
                            std::to_string(flat.numel()) + " != parameter length " +
                            std::to_string(layout.flat_len()));
  std::vector<NodeId> out;
  out.reserve(static_cast<size_t>(layout.size()));
  for (int64_t i = 0; i < layout.size(); ++i) {
    Tensor piece(layout.tensor(i).shape());
    int64_t off = layout.offset(i);
    for (int64_t k = 0; k < piece.numel(); ++k) piece[k] = flat[off + k];
    out.push_back(tape.constant(std::move(piece)));
  }
  return out;
}

}  // namespace

AnchorEval::AnchorEval(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                       const Batch& batch, EvalCounters* counters)
    : phi_layout_(phi.zeros_like()), theta_layout_(theta.zeros_like()) {
  BoundParams bp = bind_group(tape_, phi);
  BoundParams bt = bind_group(tape_, theta);
  phi_leaves_ = bp.ids;
  theta_leaves_ = bt.ids;

  loss_node_ = f.build(tape_, bp, bt, batch);
  if (tape_.value(loss_node_).numel() != 1)
    throw ShapeMismatch("loss graph '" + f.name() + "' did not produce a scalar");
  loss_ = tape_.value(loss_node_)[0];
  if (!std::isfinite(loss_))
    throw NonFiniteLoss("loss graph '" + f.name() + "' produced a non-finite value");

  grad_nodes_ = tape_.backward(loss_node_, phi_leaves_);
  grad_flat_ = gather_flat(tape_, grad_nodes_, phi_layout_);
  if (counters) counters->first_order_grad_count += 1;
}

Tensor AnchorEval::theta_grad(EvalCounters* counters) {
  std::vector<NodeId> g = tape_.backward(loss_node_, theta_leaves_);
  if (counters) counters->first_order_grad_count += 1;
  return gather_flat(tape_, g, theta_layout_);
}

NodeId AnchorEval::grad_dot(const Tensor& v) {
  std::vector<NodeId> pieces = split_constants(tape_, v, phi_layout_);
  NodeId acc = kNoNode;
  for (size_t i = 0; i < grad_nodes_.size(); ++i) {
    if (grad_nodes_[i] == kNoNode) continue;
    NodeId term = tape_.sum(tape_.mul(grad_nodes_[i], pieces[i]));
    acc = (acc == kNoNode) ? term : tape_.add(acc, term);
  }
  if (acc == kNoNode) acc = tape_.constant(Tensor::scalar(0.0));
  return acc;
}

Tensor AnchorEval::hvp(const Tensor& v, EvalCounters* counters) {
  NodeId s = grad_dot(v);
  std::vector<NodeId> h = tape_.backward(s, phi_leaves_);
  if (counters) counters->hvp_count += 1;
  return gather_flat(tape_, h, phi_layout_);
}

Tensor AnchorEval::cross_vp(const Tensor& v, EvalCounters* counters) {
  NodeId s = grad_dot(v);
  std::vector<NodeId> c = tape_.backward(s, theta_leaves_);
  if (counters) counters->cross_vp_count += 1;
  return gather_flat(tape_, c, theta_layout_);
}

double loss_value(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                  const Batch& batch) {
  Tape tape;
  BoundParams bp = bind_group(tape, phi);
  BoundParams bt = bind_group(tape, theta);
  NodeId loss_node = f.build(tape, bp, bt, batch);
  double v = tape.value(loss_node)[0];
  if (!std::isfinite(v))
    throw NonFiniteLoss("loss graph '" + f.name() + "' produced a non-finite value");
  return v;
}

Tensor grad(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta, const Batch& batch,
            EvalCounters* counters) {
  AnchorEval eval(f, phi, theta, batch, counters);
  return eval.grad();
}

Tensor grad_theta(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                  const Batch& batch, EvalCounters* counters) {
  Tape tape;
  BoundParams bp = bind_group(tape, phi);
  BoundParams bt = bind_group(tape, theta);
  NodeId loss_node = f.build(tape, bp, bt, batch);
  if (!std::isfinite(tape.value(loss_node)[0]))
    throw NonFiniteLoss("loss graph '" + f.name() + "' produced a non-finite value");
  std::vector<NodeId> g = tape.backward(loss_node, bt.ids);
  if (counters) counters->first_order_grad_count += 1;
  return gather_flat(tape, g, theta.zeros_like());
}

Tensor hvp(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta, const Batch& batch,
           const Tensor& v, EvalCounters* counters) {
  AnchorEval eval(f, phi, theta, batch);
  return eval.hvp(v, counters);
}

Tensor cross_vp(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                const Batch& batch, const Tensor& v, EvalCounters* counters) {
  AnchorEval eval(f, phi, theta, batch);
  return eval.cross_vp(v, counters);
}

}  // namespace metastep
