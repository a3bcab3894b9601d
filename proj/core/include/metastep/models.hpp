#pragma once

#include <functional>
#include <string>
#include <vector>

#include "metastep/loss_graph.hpp"
#include "metastep/rng.hpp"

namespace metastep {

enum class Activation { Tanh, Relu, Softplus };

/// Dense net architecture descriptor: input -> hidden... -> output, with the
/// activation applied after every hidden affine map.
struct MlpSpec {
  int64_t input = 1;
  std::vector<int64_t> hidden;
  int64_t output = 1;
  Activation act = Activation::Tanh;
  double input_scale = 1.0;  // fixed feature normalization applied before layer 0

  int64_t num_layers() const { return static_cast<int64_t>(hidden.size()) + 1; }
};

/// Parameters named W0,b0,W1,b1,...; W is (fan_in, fan_out), b is (1, fan_out).
/// Weights are normal with std 1/sqrt(fan_in), biases zero.
ParamGroup init_mlp(const MlpSpec& spec, Rng& rng);

struct MlpTaps {
  std::vector<NodeId> hidden;  // post-activation, one per hidden layer
  NodeId out = kNoNode;        // final affine output (no activation)
};

/// Record the forward pass; `param` maps entry names to tape nodes, so the
/// same code serves differentiable (leaf) and frozen (constant) networks.
MlpTaps mlp_forward(Tape& tape, const MlpSpec& spec, NodeId x,
                    const std::function<NodeId(const std::string&)>& param);

/// Mean over all entries of the squared prediction error.
NodeId mse_node(Tape& tape, NodeId pred, NodeId targets);

/// Softmax cross-entropy against one-hot targets, averaged over the batch,
/// log-sum-exp shifted by a detached row max (the shift cancels in the
/// derivative).
NodeId softmax_cross_entropy_node(Tape& tape, NodeId logits, NodeId targets);

/// Regression loss: phi holds the net, theta is unused by the graph.
LossGraph mlp_mse_loss(MlpSpec spec);

/// Classification loss: phi holds the net, theta is unused by the graph.
LossGraph mlp_ce_loss(MlpSpec spec);

/// Classification accuracy (argmax vs one-hot), evaluated outside the tape.
double accuracy(const MlpSpec& spec, const ParamGroup& params, const Batch& batch);

}  // namespace metastep
