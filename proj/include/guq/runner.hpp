#pragma once

// Experiments driven by a RunConfig. Each returns the report document the
// CLI writes; seeds come only from the configuration.

#include <string>
#include <utility>
#include <vector>

#include "guq/config.hpp"
#include "guq/harness.hpp"
#include "guq/report.hpp"

namespace guq {

inline OptimizerConfig optimizer_for(const RunConfig& cfg, std::uint64_t seed) {
  OptimizerConfig opt = cfg.optimizer;
  opt.seed = derive_seed(seed, 5);
  return opt;
}

/// Trains on the configured two-cluster task for one seed.
inline TrainReport train_on_task(const RunConfig& cfg, std::uint64_t seed,
                                 TaskData* data_out = nullptr) {
  TaskData data = make_two_cluster_data(cfg.data, seed);
  TrainReport r = fit(cfg.model, optimizer_for(cfg, seed), data.train, data.val);
  if (data_out) *data_out = std::move(data);
  return r;
}

struct ExperimentOutput {
  Json report;
  std::vector<CsvRow> rows;
};

inline ExperimentOutput run_ood(const RunConfig& cfg) {
  OodBenchmarkConfig b;
  b.model = cfg.model;
  b.optimizer = cfg.optimizer;
  b.task = cfg.data;
  b.methods = cfg.scorer_configs();
  b.seeds = cfg.seeds;
  b.options = {cfg.accuracy_floor, cfg.threads};
  const OodReport r = run_ood_benchmark(b);
  Json doc = to_json(r);
  doc["config"] = report_config_json(cfg);
  return {doc, to_csv_rows(r)};
}

/// Trains once (global seed) on clusters with the calibration stddev, then
/// scores the test split once per experiment seed.
inline ExperimentOutput run_calibration(const RunConfig& cfg) {
  TwoClusterTask task = cfg.data;
  task.stddev = cfg.calibration_stddev;
  const TaskData data = make_two_cluster_data(task, cfg.seed);
  const TrainReport trained = fit(cfg.model, optimizer_for(cfg, cfg.seed), data.train, data.val);
  const CalibrationReport r =
      run_calibration_experiment(trained.model, data.test,
                                 make_scorers(trained.model, cfg.scorer_configs()), cfg.seeds,
                                 cfg.threads);
  Json doc = to_json(r);
  doc["config"] = report_config_json(cfg);
  return {doc, to_csv_rows(r)};
}

struct ActiveLearnPair {
  std::uint64_t seed = 0;
  ActiveLearnCurve scored;
  ActiveLearnCurve random;
};

inline ActiveLearnConfig active_learn_config(const RunConfig& cfg, std::uint64_t seed,
                                             bool random) {
  ActiveLearnConfig al;
  al.initial = cfg.active_learning.initial;
  al.per_cycle = cfg.active_learning.per_cycle;
  al.cycles = cfg.active_learning.cycles;
  if (!random && cfg.active_learning.acquisition != "random") {
    al.scorer = cfg.scorer.for_method(parse_method(cfg.active_learning.acquisition));
  }
  al.model = cfg.model;
  al.optimizer = cfg.optimizer;
  al.seed = seed;
  al.threads = cfg.threads;
  return al;
}

/// For each seed: the configured acquisition and random acquisition on the
/// same data, initial set and training seed.
inline std::vector<ActiveLearnPair> run_active_learning_pairs(const RunConfig& cfg) {
  std::vector<ActiveLearnPair> out;
  for (std::uint64_t seed : cfg.seeds) {
    TwoClusterTask task = cfg.data;
    task.train_per_class = cfg.active_learning.train_per_class;
    const TaskData data = make_two_cluster_data(task, seed);
    ActiveLearnPair p;
    p.seed = seed;
    p.scored = run_active_learning(active_learn_config(cfg, seed, false), data.train,
                                   data.val, data.test);
    p.random = run_active_learning(active_learn_config(cfg, seed, true), data.train,
                                   data.val, data.test);
    out.push_back(std::move(p));
  }
  return out;
}

inline ExperimentOutput run_active(const RunConfig& cfg) {
  ExperimentOutput out;
  Json runs = Json::array();
  for (const auto& p : run_active_learning_pairs(cfg)) {
    runs.push_back({{"seed", p.seed}, {"scored", to_json(p.scored)}, {"random", to_json(p.random)}});
    for (auto& row : to_csv_rows(p.scored, p.seed)) out.rows.push_back(std::move(row));
    for (auto& row : to_csv_rows(p.random, p.seed)) out.rows.push_back(std::move(row));
  }
  out.report = {{"experiment", "active_learning"},
                {"runs", runs},
                {"config", report_config_json(cfg)}};
  return out;
}

// ---------------------------------------------------------------------------

inline std::vector<PropositionReport> verify_posterior(const RunConfig& cfg) {
  std::vector<PropositionReport> out;
  for (std::uint64_t seed : cfg.seeds) {
    PropositionReport r = verify_gaussian_posterior(cfg.propositions.posterior_n, seed,
                                                    cfg.threads);
    r.notes.push_back("seed " + std::to_string(seed));
    out.push_back(std::move(r));
  }
  return out;
}

inline PropositionReport verify_transfer(const RunConfig& cfg) {
  ModelConfig model = cfg.model;
  if (model.architecture != Architecture::mlp) model = ModelConfig::mlp(2, {64, 64}, 2);
  return verify_perturbation_transfer_random(model, cfg.propositions.transfer_models,
                                             cfg.propositions.transfer_dx_scale, cfg.seed);
}

inline GradientVanishingConfig vanishing_config(const RunConfig& cfg, std::uint64_t seed) {
  const auto& ps = cfg.propositions;
  GradientVanishingConfig v;
  v.model = cfg.model;
  v.optimizer = cfg.optimizer;
  v.optimizer.selection = ModelSelection::last_epoch;
  v.optimizer.max_epochs = ps.vanishing_max_epochs;
  v.optimizer.weight_decay = ps.vanishing_weight_decay;
  v.task = cfg.data;
  v.task.train_per_class = ps.vanishing_train_per_class;
  v.task.test_per_class = 100;
  v.task.ring_size = 200;
  v.loss_floor = ps.vanishing_loss_floor;
  v.ratio = ps.vanishing_ratio;
  for (std::size_t e = 0; e < ps.vanishing_max_epochs; e += std::max<std::size_t>(1, ps.vanishing_max_epochs / 5)) {
    v.checkpoints.push_back(e);
  }
  v.checkpoints.push_back(ps.vanishing_max_epochs - 1);
  v.seed = seed;
  v.threads = cfg.threads;
  return v;
}

inline std::vector<PropositionReport> verify_vanishing(const RunConfig& cfg) {
  std::vector<PropositionReport> out;
  for (std::uint64_t seed : cfg.seeds) {
    PropositionReport r = verify_gradient_vanishing(vanishing_config(cfg, seed));
    r.notes.push_back("seed " + std::to_string(seed));
    out.push_back(std::move(r));
  }
  return out;
}

/// Bound check on a model trained with the global seed; half the inputs
/// are ID test points, the rest OOD ring points.
inline PropositionReport verify_bound(const RunConfig& cfg) {
  TaskData data;
  const TrainReport trained = train_on_task(cfg, cfg.seed, &data);
  const std::size_t want = cfg.propositions.bound_inputs;
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < std::min(want / 2, data.test.size()); ++i) {
    inputs.push_back(data.test.inputs[i]);
  }
  for (std::size_t i = 0; inputs.size() < want && i < data.ood.size(); ++i) {
    inputs.push_back(data.ood.inputs[i]);
  }
  return verify_exgrad_bound_sweep(trained.model, inputs, cfg.propositions.bound_sigmas,
                                   cfg.propositions.bound_trials, cfg.seed, cfg.threads);
}

/// `which` is "all", "1", "3", "4" or "5".
inline std::vector<PropositionReport> run_propositions(const RunConfig& cfg,
                                                       const std::string& which) {
  if (which != "all" && which != "1" && which != "3" && which != "4" && which != "5") {
    throw ConfigError("unknown proposition '" + which + "' (expected all, 1, 3, 4 or 5)");
  }
  std::vector<PropositionReport> out;
  auto append = [&](std::vector<PropositionReport> v) {
    for (auto& r : v) out.push_back(std::move(r));
  };
  if (which == "all" || which == "1") append(verify_posterior(cfg));
  if (which == "all" || which == "3") out.push_back(verify_transfer(cfg));
  if (which == "all" || which == "4") append(verify_vanishing(cfg));
  if (which == "all" || which == "5") out.push_back(verify_bound(cfg));
  return out;
}

inline Json propositions_to_json(const std::vector<PropositionReport>& reports,
                                 const RunConfig& cfg) {
  Json list = Json::array();
  bool all = true;
  for (const auto& r : reports) {
    list.push_back(to_json(r));
    all = all && (r.pass || r.inconclusive);
  }
  return {{"experiment", "propositions"},
          {"reports", list},
          {"all_pass", all},
          {"config", report_config_json(cfg)}};
}

}  // namespace guq
