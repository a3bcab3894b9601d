// Training-run measurements: slower, end-to-end learning checks.

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "metastep/experiments.hpp"
#include "metastep/tasks.hpp"

using namespace metastep;
namespace fs = std::filesystem;

TEST_CASE("sinusoid meta-training: adaptation helps on nearly every task") {
  fs::path dir = fs::temp_directory_path() / "metastep_tests" / "sinusoid_train";
  fs::remove_all(dir);

  RunConfig cfg;
  cfg.mode = "maml-sinusoid";
  cfg.estimator = "exact";
  cfg.inner_steps = 4;
  cfg.eta = 0.01;
  cfg.mu = 0.9;
  cfg.omega = 1e-4;
  cfg.eta_meta = 0.002;
  cfg.meta_batch = 4;
  cfg.outer_iters = 800;
  cfg.seed = 21;
  cfg.out_dir = dir.string();
  cfg.eval_every = 800;
  cfg.eval_tasks = 100;
  cfg.shots = 5;
  cfg.query = 10;
  cfg.hidden1 = 40;
  cfg.hidden2 = 40;
  REQUIRE(run(cfg) == 0);

  std::ifstream in(dir / "summary.json");
  nlohmann::json summary = nlohmann::json::parse(in);
  double improved = summary["final"]["improved_fraction"].get<double>();
  double pre = summary["final"]["pre_adapt_loss"].get<double>();
  double post = summary["final"]["post_adapt_loss"].get<double>();
  CAPTURE(pre);
  CAPTURE(post);
  CHECK(improved >= 0.95);
  CHECK(post < pre);
}

namespace {

double cluster_eval_accuracy(const MlpSpec& spec, const LossGraph& loss, const ParamGroup& theta,
                             const std::vector<Episode>& episodes, const HyperParams& hp,
                             const WindowSchedule& schedule) {
  double acc = 0.0;
  for (const auto& ep : episodes) {
    std::vector<Batch> batches(static_cast<size_t>(schedule.num_windows()), ep.support);
    Trajectory traj = unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp,
                                   schedule, batches);
    acc += accuracy(spec, theta.with_flat(traj.final_state().phi), ep.query);
  }
  return acc / static_cast<double>(episodes.size());
}

}  // namespace

TEST_CASE("cluster meta-training beats the no-meta-training baseline by 10+ points") {
  MlpSpec spec{16, {32}, 5, Activation::Tanh};
  LossGraph loss = mlp_ce_loss(spec);
  HyperParams hp{0.05, 0.9, 1e-4};
  WindowSchedule schedule = WindowSchedule::make(4, 1);

  Rng train_rng(33);
  ParamGroup theta = init_mlp(spec, train_rng);
  ParamGroup theta0 = theta;

  Rng eval_rng(34);
  std::vector<Episode> eval_episodes;
  for (int i = 0; i < 200; ++i)
    eval_episodes.push_back(sample_cluster_episode(eval_rng, 5, 1, 5, 16));

  double baseline = cluster_eval_accuracy(spec, loss, theta0, eval_episodes, hp, schedule);

  for (int iter = 0; iter < 600; ++iter) {
    std::vector<Episode> eps;
    std::vector<EpisodeTask> tasks;
    for (int m = 0; m < 4; ++m) eps.push_back(sample_cluster_episode(train_rng, 5, 1, 5, 16));
    for (const auto& ep : eps) tasks.push_back({&loss, &loss, ep.support, ep.query});
    theta = maml_outer_step(theta, tasks, hp, 0.01, schedule, Estimator::Exact);
  }

  double trained = cluster_eval_accuracy(spec, loss, theta, eval_episodes, hp, schedule);
  CAPTURE(baseline);
  CAPTURE(trained);
  CHECK(trained - baseline >= 0.10);
}
