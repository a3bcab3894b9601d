#include "metastep/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace metastep {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

Episode sample_sinusoid(Rng& rng, int k_shot, int q_query) {
  double amplitude = rng.uniform(0.1, 5.0);
  double phase = rng.uniform(0.0, kPi);
  auto draw = [&](int n) {
    Batch b;
    b.inputs = Tensor({n, 1});
    b.targets = Tensor({n, 1});
    for (int i = 0; i < n; ++i) {
      double x = rng.uniform(-5.0, 5.0);
      b.inputs.at(i, 0) = x;
      b.targets.at(i, 0) = amplitude * std::sin(x + phase);
    }
    return b;
  };
  Episode ep;
  ep.support = draw(k_shot);
  ep.query = draw(q_query);
  ep.descriptor = {{"amplitude", amplitude}, {"phase", phase}};
  return ep;
}

Episode sample_cluster_episode(Rng& rng, int ways, int k_shot, int q_query, int dim,
                               double sigma) {
  if (ways < 2) throw TaskError("sample_cluster_episode: need at least 2 classes");
  if (dim < 2) throw TaskError("sample_cluster_episode: need dim >= 2");

  constexpr double kMaxPairwiseCos = 0.8;
  constexpr int kRejectionBudget = 1000;

  Tensor centroids({ways, dim});
  int rejections = 0;
  for (int c = 0; c < ways;) {
    Tensor cand({dim});
    double norm = 0.0;
    for (int j = 0; j < dim; ++j) {
      cand[j] = rng.normal();
      norm += cand[j] * cand[j];
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < dim; ++j) cand[j] /= norm;

    bool ok = true;
    for (int prev = 0; prev < c && ok; ++prev) {
      double d = 0.0;
      for (int j = 0; j < dim; ++j) d += cand[j] * centroids.at(prev, j);
      ok = std::abs(d) < kMaxPairwiseCos;
    }
    if (!ok) {
      if (++rejections >= kRejectionBudget)
        throw RejectionOverflow("sample_cluster_episode: centroid sampling failed " +
                                std::to_string(kRejectionBudget) + " times (dim " +
                                std::to_string(dim) + " too small for " + std::to_string(ways) +
                                " classes)");
      continue;
    }
    for (int j = 0; j < dim; ++j) centroids.at(c, j) = cand[j];
    ++c;
  }

  auto draw = [&](int per_class) {
    int n = ways * per_class;
    Batch b;
    b.inputs = Tensor({n, dim});
    b.targets = Tensor({n, ways});
    int row = 0;
    for (int c = 0; c < ways; ++c)
      for (int i = 0; i < per_class; ++i, ++row) {
        for (int j = 0; j < dim; ++j)
          b.inputs.at(row, j) = centroids.at(c, j) + sigma * rng.normal();
        b.targets.at(row, c) = 1.0;
      }
    return b;
  };

  Episode ep;
  ep.support = draw(k_shot);
  ep.query = draw(q_query);
  ep.centroids = centroids;
  ep.descriptor = {{"ways", static_cast<double>(ways)}, {"sigma", sigma}};
  return ep;
}

namespace {

/// Names of the matching-map and raw-weight entries for layer l.
std::string map_name(size_t l) { return "M" + std::to_string(l + 1); }
std::string raw_name(size_t l) { return "w" + std::to_string(l + 1) + "_raw"; }

/// Immutable pieces shared by the three loss closures.
struct TransferCore {
  MlpSpec source_arch;
  MlpSpec target_arch;
  ParamGroup source_params;
};

NodeId transfer_loss_node(Tape& tape, const TransferCore& core, const BoundParams& phi,
                          const BoundParams& theta, const Batch& batch) {
  NodeId x = tape.constant(batch.inputs);
  MlpTaps tgt = mlp_forward(tape, core.target_arch, x,
                            [&](const std::string& n) { return phi[n]; });
  MlpTaps src = mlp_forward(tape, core.source_arch, x, [&](const std::string& n) {
    return tape.constant(core.source_params[n]);
  });
  double inv_n = 1.0 / static_cast<double>(batch.inputs.rows());
  NodeId acc = kNoNode;
  for (size_t l = 0; l < tgt.hidden.size(); ++l) {
    NodeId mapped = tape.matmul(src.hidden[l], theta[map_name(l)]);
    NodeId residual = tape.scale(tape.sum(tape.square(tape.sub(tgt.hidden[l], mapped))), inv_n);
    NodeId weighted = tape.mul(tape.softplus(theta[raw_name(l)]), residual);
    acc = (acc == kNoNode) ? weighted : tape.add(acc, weighted);
  }
  return acc;
}

NodeId acc_loss_node(Tape& tape, const TransferCore& core, const BoundParams& phi,
                     const Batch& batch) {
  NodeId x = tape.constant(batch.inputs);
  NodeId y = tape.constant(batch.targets);
  MlpTaps tgt = mlp_forward(tape, core.target_arch, x,
                            [&](const std::string& n) { return phi[n]; });
  return softmax_cross_entropy_node(tape, tgt.out, y);
}

}  // namespace

TransferTask make_transfer_task(MlpSpec source_arch, MlpSpec target_arch,
                                ParamGroup source_params, double beta) {
  if (source_arch.hidden.size() != target_arch.hidden.size())
    throw ShapeMismatch("make_transfer_task: source and target need matching depth");
  auto core = std::make_shared<TransferCore>(
      TransferCore{source_arch, target_arch, source_params});

  TransferTask task;
  task.source_arch = std::move(source_arch);
  task.target_arch = std::move(target_arch);
  task.source_params = std::move(source_params);
  task.beta = beta;

  task.acc = LossGraph("transfer_acc", [core](Tape& tape, const BoundParams& phi,
                                              const BoundParams&, const Batch& batch) {
    return acc_loss_node(tape, *core, phi, batch);
  });
  task.tfr = LossGraph("transfer_tfr", [core](Tape& tape, const BoundParams& phi,
                                              const BoundParams& theta, const Batch& batch) {
    return transfer_loss_node(tape, *core, phi, theta, batch);
  });
  task.total = LossGraph("transfer_total",
                         [core, beta](Tape& tape, const BoundParams& phi,
                                      const BoundParams& theta, const Batch& batch) {
                           NodeId acc = acc_loss_node(tape, *core, phi, batch);
                           NodeId tfr = transfer_loss_node(tape, *core, phi, theta, batch);
                           return tape.add(acc, tape.scale(tfr, beta));
                         });
  return task;
}

ParamGroup init_transfer_theta(const TransferTask& task, Rng& rng) {
  ParamGroup theta;
  for (size_t l = 0; l < task.source_arch.hidden.size(); ++l) {
    int64_t src_w = task.source_arch.hidden[l];
    int64_t tgt_w = task.target_arch.hidden[l];
    Tensor m({src_w, tgt_w});
    double s = 1.0 / std::sqrt(static_cast<double>(src_w));
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = s * rng.normal();
    theta.add(map_name(l), std::move(m));
    theta.add(raw_name(l), Tensor({1}));
  }
  return theta;
}

TransferLossValues transfer_losses(const TransferTask& task, const ParamGroup& phi,
                                   const ParamGroup& theta, const Batch& batch) {
  TransferLossValues v;
  v.acc = loss_value(task.acc, phi, theta, batch);
  v.tfr = loss_value(task.tfr, phi, theta, batch);
  v.total = loss_value(task.total, phi, theta, batch);
  return v;
}

namespace {

/// Fixed synthetic dataset drawn from a cluster distribution.
void make_dataset(Rng& rng, const Tensor& centroids, double sigma, int per_class, Tensor& xs,
                  Tensor& ys) {
  int classes = static_cast<int>(centroids.rows());
  int dim = static_cast<int>(centroids.cols());
  int n = classes * per_class;
  xs = Tensor({n, dim});
  ys = Tensor({n, classes});
  int row = 0;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int j = 0; j < dim; ++j) xs.at(row, j) = centroids.at(c, j) + sigma * rng.normal();
      ys.at(row, c) = 1.0;
    }
}

Tensor sample_centroids(Rng& rng, int classes, int dim) {
  Episode probe = sample_cluster_episode(rng, classes, 1, 1, dim, 0.0);
  return probe.centroids;
}

}  // namespace

TransferProblem make_transfer_problem(Rng& rng, const TransferConfig& cfg) {
  MlpSpec source_arch{cfg.input_dim, {cfg.src_h1, cfg.src_h2}, cfg.classes, Activation::Tanh};
  MlpSpec target_arch{cfg.input_dim, {cfg.tgt_h1, cfg.tgt_h2}, cfg.classes, Activation::Tanh};

  // Source task: same input space, different label function.
  Tensor source_centroids = sample_centroids(rng, cfg.classes, cfg.input_dim);
  Tensor src_x, src_y;
  make_dataset(rng, source_centroids, cfg.sigma, cfg.train_per_class, src_x, src_y);

  ParamGroup source_params = init_mlp(source_arch, rng);
  LossGraph source_loss = mlp_ce_loss(source_arch);
  ParamGroup empty_theta;
  OptState state = OptState::initial(source_params.flatten());
  for (int t = 0; t < cfg.source_pretrain_steps; ++t) {
    Batch b = sample_batch(rng, src_x, src_y, cfg.source_batch);
    Tensor g = grad(source_loss, source_params.with_flat(state.phi), empty_theta, b);
    state = step(state, g, cfg.source_pretrain_hp);
  }
  source_params = source_params.with_flat(state.phi);

  // Target task: its own clusters, fixed train/eval splits.
  Tensor target_centroids = sample_centroids(rng, cfg.classes, cfg.input_dim);
  TransferProblem problem;
  make_dataset(rng, target_centroids, cfg.sigma, cfg.train_per_class, problem.train_x,
               problem.train_y);
  make_dataset(rng, target_centroids, cfg.sigma, cfg.eval_per_class, problem.eval_x,
               problem.eval_y);

  problem.task = make_transfer_task(source_arch, target_arch, std::move(source_params), cfg.beta);
  problem.phi0 = init_mlp(target_arch, rng);
  problem.theta0 = init_transfer_theta(problem.task, rng);
  return problem;
}

Batch sample_batch(Rng& rng, const Tensor& xs, const Tensor& ys, int batch_size) {
  int64_t n = xs.rows();
  Batch b;
  b.inputs = Tensor({batch_size, xs.cols()});
  b.targets = Tensor({batch_size, ys.cols()});
  for (int i = 0; i < batch_size; ++i) {
    int64_t r = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
    for (int64_t j = 0; j < xs.cols(); ++j) b.inputs.at(i, j) = xs.at(r, j);
    for (int64_t j = 0; j < ys.cols(); ++j) b.targets.at(i, j) = ys.at(r, j);
  }
  return b;
}

GradDiffSeries grad_diff_series(const Trajectory& traj, const LossGraph& loss,
                                const ParamGroup& theta) {
  GradDiffSeries series;
  int base_step = traj.states.front().step_index;
  for (const auto& window : traj.windows) {
    if (window.loss != &loss) continue;
    if (window.length != 1)
      throw TaskError("grad_diff_series: diagnostic requires the exact schedule (n = 1)");
    size_t idx = static_cast<size_t>(window.anchor_step - base_step);
    const Tensor& g_before = window.anchor->grad();
    ParamGroup phi_after = traj.phi_layout.with_flat(traj.states[idx + 1].phi);
    Tensor g_after = grad(loss, phi_after, theta, window.batch);
    double denom = norm2(g_after);
    if (denom < kGradDiffDenomFloor) {
      series.values.push_back(kNaN);
    } else {
      series.values.push_back(norm2(sub(g_after, g_before)) / denom);
    }
  }
  return series;
}

double median_defined(const std::vector<double>& values) {
  std::vector<double> defined;
  for (double v : values)
    if (!std::isnan(v)) defined.push_back(v);
  if (defined.empty()) return kNaN;
  std::sort(defined.begin(), defined.end());
  size_t n = defined.size();
  return n % 2 ? defined[n / 2] : 0.5 * (defined[n / 2 - 1] + defined[n / 2]);
}

}  // namespace metastep
