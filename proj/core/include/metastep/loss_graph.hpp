#pragma once

#include <functional>
#include <string>
#include <utility>

#include "metastep/param_group.hpp"
#include "metastep/tape.hpp"

namespace metastep {

/// One mini-batch: inputs are (N,D); targets are (N,C) one-hot for
/// classification or (N,1) for regression.
struct Batch {
  Tensor inputs;
  Tensor targets;
};

/// Leaf handles for one parameter group inside a tape being built.
struct BoundParams {
  const ParamGroup* group = nullptr;
  std::vector<NodeId> ids;

  NodeId operator[](const std::string& name) const {
    for (int64_t i = 0; i < group->size(); ++i)
      if (group->name(i) == name) return ids[static_cast<size_t>(i)];
    throw ShapeMismatch("BoundParams: no entry '" + name + "'");
  }
  bool empty() const { return ids.empty(); }
};

/// A scalar loss as an evaluation procedure: given a tape and leaf handles
/// for (task-params, meta-params) plus a batch, the builder records the
/// forward computation and returns the scalar loss node. Builders must use
/// only tape ops, so every loss is differentiable to second order by
/// construction.
class LossGraph {
 public:
  using Builder =
      std::function<NodeId(Tape&, const BoundParams& phi, const BoundParams& theta, const Batch&)>;

  LossGraph() = default;
  LossGraph(std::string name, Builder builder)
      : name_(std::move(name)), builder_(std::move(builder)) {}

  const std::string& name() const { return name_; }
  bool valid() const { return static_cast<bool>(builder_); }

  NodeId build(Tape& tape, const BoundParams& phi, const BoundParams& theta,
               const Batch& batch) const {
    return builder_(tape, phi, theta, batch);
  }

 private:
  std::string name_;
  Builder builder_;
};

}  // namespace metastep
