#pragma once

#include <map>
#include <string>

#include "metastep/metagrad.hpp"
#include "metastep/models.hpp"

namespace metastep {

/// Support/query pair drawn from one task-distribution instance.
struct Episode {
  Batch support;
  Batch query;
  std::map<std::string, double> descriptor;  // e.g. amplitude/phase
  Tensor centroids;                          // class centroids, when relevant
};

/// Few-shot regression surrogate: y = A sin(x + p) with A in [0.1, 5],
/// p in [0, pi], x uniform in [-5, 5].
Episode sample_sinusoid(Rng& rng, int k_shot, int q_query);

/// Synthetic N-way K-shot classification: unit-norm Gaussian class centroids
/// with a minimum pairwise angle enforced by rejection, isotropic noise.
Episode sample_cluster_episode(Rng& rng, int ways, int k_shot, int q_query, int dim,
                               double sigma = 0.3);

/// Meta-transfer toy problem. The source net is frozen; theta consists of
/// per-layer matching maps M_l plus raw weights turned positive through
/// softplus; theta enters the objective only through the transfer loss.
struct TransferTask {
  MlpSpec source_arch;
  MlpSpec target_arch;
  ParamGroup source_params;  // frozen during meta-training
  double beta = 0.5;

  LossGraph acc;    // softmax cross-entropy of the target model
  LossGraph tfr;    // weighted feature-matching loss, the theta path
  LossGraph total;  // acc + beta * tfr

  TransferObjective objective() const { return {&total, &tfr, &acc}; }
};

/// Builds the three compound-loss graphs for a (source, target) pair.
TransferTask make_transfer_task(MlpSpec source_arch, MlpSpec target_arch,
                                ParamGroup source_params, double beta);

/// Matching maps initialized at small scale, raw layer weights at zero
/// (softplus(0) ~ 0.69).
ParamGroup init_transfer_theta(const TransferTask& task, Rng& rng);

struct TransferLossValues {
  double acc = 0.0;
  double tfr = 0.0;
  double total = 0.0;
};

TransferLossValues transfer_losses(const TransferTask& task, const ParamGroup& phi,
                                   const ParamGroup& theta, const Batch& batch);

/// Complete desk-scale transfer problem: frozen pretrained source, fresh
/// target, datasets for the target task, and initial parameters.
struct TransferConfig {
  int input_dim = 8;
  int classes = 4;
  int src_h1 = 16, src_h2 = 12;
  int tgt_h1 = 12, tgt_h2 = 10;
  double beta = 0.5;
  double sigma = 0.3;
  int train_per_class = 64;
  int eval_per_class = 32;
  int source_pretrain_steps = 500;
  HyperParams source_pretrain_hp{0.1, 0.9, 1e-4};
  int source_batch = 32;
};

struct TransferProblem {
  TransferTask task;
  ParamGroup theta0;
  ParamGroup phi0;
  Tensor train_x, train_y;
  Tensor eval_x, eval_y;
};

TransferProblem make_transfer_problem(Rng& rng, const TransferConfig& cfg);

/// Draw `batch_size` rows (with replacement) from a dataset.
Batch sample_batch(Rng& rng, const Tensor& xs, const Tensor& ys, int batch_size);

/// Normalized gradient-difference diagnostic
///   d_t = ||grad L_t(phi_{t+1}) - grad L_t(phi_t)|| / ||grad L_t(phi_{t+1})||
/// over the trajectory's unit-length windows whose loss is `loss`, each on
/// its own anchor batch. Entries with a vanishing denominator are recorded
/// as NaN sentinels, never as zero.
struct GradDiffSeries {
  std::vector<double> values;
  int outer_iter = 0;
};

inline constexpr double kGradDiffDenomFloor = 1e-12;

GradDiffSeries grad_diff_series(const Trajectory& traj, const LossGraph& loss,
                                const ParamGroup& theta);

/// Median of the non-sentinel entries; NaN when none are defined.
double median_defined(const std::vector<double>& values);

}  // namespace metastep
