#include "metastep/models.hpp"

#include <cmath>

#include "metastep/engine.hpp"

namespace metastep {

ParamGroup init_mlp(const MlpSpec& spec, Rng& rng) {
  ParamGroup params;
  int64_t fan_in = spec.input;
  std::vector<int64_t> outs = spec.hidden;
  outs.push_back(spec.output);
  for (size_t l = 0; l < outs.size(); ++l) {
    int64_t fan_out = outs[l];
    Tensor w({fan_in, fan_out});
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = s * rng.normal();
    params.add("W" + std::to_string(l), std::move(w));
    params.add("b" + std::to_string(l), Tensor({1, fan_out}));
    fan_in = fan_out;
  }
  return params;
}

namespace {

NodeId activate(Tape& tape, NodeId z, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return tape.tanh(z);
    case Activation::Relu:
      return tape.relu(z);
    case Activation::Softplus:
      return tape.softplus(z);
  }
  return z;
}

}  // namespace

MlpTaps mlp_forward(Tape& tape, const MlpSpec& spec, NodeId x,
                    const std::function<NodeId(const std::string&)>& param) {
  MlpTaps taps;
  NodeId h = spec.input_scale != 1.0 ? tape.scale(x, spec.input_scale) : x;
  int64_t n = tape.value(x).rows();
  int64_t layers = spec.num_layers();
  for (int64_t l = 0; l < layers; ++l) {
    NodeId w = param("W" + std::to_string(l));
    NodeId b = param("b" + std::to_string(l));
    NodeId z = tape.add(tape.matmul(h, w), tape.broadcast_rows(b, n));
    if (l + 1 < layers) {
      h = activate(tape, z, spec.act);
      taps.hidden.push_back(h);
    } else {
      taps.out = z;
    }
  }
  return taps;
}

NodeId mse_node(Tape& tape, NodeId pred, NodeId targets) {
  return tape.mean(tape.square(tape.sub(pred, targets)));
}

NodeId softmax_cross_entropy_node(Tape& tape, NodeId logits, NodeId targets) {
  int64_t n = tape.value(logits).rows();
  int64_t c = tape.value(logits).cols();
  NodeId shifted = tape.sub(logits, tape.broadcast_cols(tape.rowmax_detached(logits), c));
  NodeId lse = tape.log(tape.rowsum(tape.exp(shifted)));           // (N,1)
  NodeId picked = tape.rowsum(tape.mul(targets, shifted));         // (N,1)
  NodeId nll = tape.sub(lse, picked);
  return tape.scale(tape.sum(nll), 1.0 / static_cast<double>(n));
}

LossGraph mlp_mse_loss(MlpSpec spec) {
  return LossGraph("mlp_mse", [spec](Tape& tape, const BoundParams& phi, const BoundParams&,
                                     const Batch& batch) {
    NodeId x = tape.constant(batch.inputs);
    NodeId y = tape.constant(batch.targets);
    MlpTaps taps = mlp_forward(tape, spec, x, [&](const std::string& n) { return phi[n]; });
    return mse_node(tape, taps.out, y);
  });
}

LossGraph mlp_ce_loss(MlpSpec spec) {
  return LossGraph("mlp_ce", [spec](Tape& tape, const BoundParams& phi, const BoundParams&,
                                    const Batch& batch) {
    NodeId x = tape.constant(batch.inputs);
    NodeId y = tape.constant(batch.targets);
    MlpTaps taps = mlp_forward(tape, spec, x, [&](const std::string& n) { return phi[n]; });
    return softmax_cross_entropy_node(tape, taps.out, y);
  });
}

double accuracy(const MlpSpec& spec, const ParamGroup& params, const Batch& batch) {
  Tape tape;
  NodeId x = tape.constant(batch.inputs);
  std::vector<NodeId> ids;
  for (int64_t i = 0; i < params.size(); ++i) ids.push_back(tape.constant(params.tensor(i)));
  MlpTaps taps = mlp_forward(tape, spec, x, [&](const std::string& n) {
    for (int64_t i = 0; i < params.size(); ++i)
      if (params.name(i) == n) return ids[static_cast<size_t>(i)];
    throw ShapeMismatch("accuracy: no parameter '" + n + "'");
  });
  const Tensor& logits = tape.value(taps.out);
  const Tensor& targets = batch.targets;
  int64_t n = logits.rows(), c = logits.cols();
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0, truth = 0;
    for (int64_t j = 1; j < c; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
      if (targets.at(i, j) > targets.at(i, truth)) truth = j;
    }
    if (best == truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace metastep
