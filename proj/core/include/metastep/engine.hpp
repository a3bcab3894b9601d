#pragma once

#include <cstdint>
#include <memory>

#include "metastep/loss_graph.hpp"

namespace metastep {

/// Evaluation instrumentation. Second-order products are the expensive
/// operations the multi-step estimator saves; the counters are part of every
/// meta-gradient report.
struct EvalCounters {
  int64_t hvp_count = 0;
  int64_t cross_vp_count = 0;
  int64_t first_order_grad_count = 0;

  void merge(const EvalCounters& other) {
    hvp_count += other.hvp_count;
    cross_vp_count += other.cross_vp_count;
    first_order_grad_count += other.first_order_grad_count;
  }
};

/// A loss evaluated and differentiated once at a fixed (phi, theta, batch)
/// anchor, with the tape retained. Second-order products extend the retained
/// tape by differentiating the recorded gradient, so they are taken exactly
/// at the anchor state -- the contract the window sweep relies on.
class AnchorEval {
 public:
  AnchorEval(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
             const Batch& batch, EvalCounters* counters = nullptr);

  double loss() const { return loss_; }

  /// Flat d(loss)/d(phi), length |phi|.
  const Tensor& grad() const { return grad_flat_; }

  /// (d g / d phi) v: Hessian-vector product at the anchor.
  Tensor hvp(const Tensor& v, EvalCounters* counters = nullptr);

  /// v^T (d g / d theta): mixed second-order product at the anchor.
  Tensor cross_vp(const Tensor& v, EvalCounters* counters = nullptr);

  /// Flat first-order d(loss)/d(theta); exactly zero entries where theta
  /// does not participate.
  Tensor theta_grad(EvalCounters* counters = nullptr);

  size_t tape_bytes() const { return tape_.byte_size(); }

 private:
  NodeId grad_dot(const Tensor& v);

  NodeId loss_node_ = kNoNode;
  Tape tape_;
  std::vector<NodeId> phi_leaves_;
  std::vector<NodeId> theta_leaves_;
  std::vector<NodeId> grad_nodes_;
  ParamGroup phi_layout_;
  ParamGroup theta_layout_;
  Tensor grad_flat_;
  double loss_ = 0.0;
};

/// One-shot forward evaluation.
double loss_value(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                  const Batch& batch);

/// Flat first-order gradient of f with respect to phi.
Tensor grad(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
            const Batch& batch, EvalCounters* counters = nullptr);

/// Flat first-order gradient of f with respect to theta.
Tensor grad_theta(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                  const Batch& batch, EvalCounters* counters = nullptr);

/// Hessian-vector product (d^2 f / d phi^2) v without materializing the
/// Hessian (reverse-over-reverse on a fresh tape).
Tensor hvp(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta, const Batch& batch,
           const Tensor& v, EvalCounters* counters = nullptr);

/// Mixed second-order product v^T (d g / d theta), i.e. the theta-gradient
/// of <grad_phi f, v> with v held constant.
Tensor cross_vp(const LossGraph& f, const ParamGroup& phi, const ParamGroup& theta,
                const Batch& batch, const Tensor& v, EvalCounters* counters = nullptr);

}  // namespace metastep
