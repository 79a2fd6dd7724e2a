#pragma once

// Desk-scale experiments (OOD detection, calibration, active learning) and
// numerical checks of the theory behind gradient-based uncertainty.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "guq/dataset.hpp"
#include "guq/errors.hpp"
#include "guq/metrics.hpp"
#include "guq/model.hpp"
#include "guq/parallel.hpp"
#include "guq/random.hpp"
#include "guq/scorers.hpp"
#include "guq/training.hpp"

namespace guq {

/// A scoring rule usable by the experiments: (input, seed, stream) -> score.
struct NamedScorer {
  std::string name;
  std::function<double(const Tensor& x, std::uint64_t seed, std::uint64_t stream)> fn;
};

inline NamedScorer make_scorer(const Model& model, ScorerConfig cfg) {
  cfg.validate();
  const Model* m = &model;
  return {to_string(cfg.method),
          [m, cfg](const Tensor& x, std::uint64_t seed, std::uint64_t stream) {
            ScorerConfig c = cfg;
            c.seed = seed;
            return score(*m, x, c, stream).value;
          }};
}

inline std::vector<NamedScorer> make_scorers(const Model& model,
                                             const std::vector<ScorerConfig>& cfgs) {
  std::vector<NamedScorer> out;
  for (const auto& c : cfgs) out.push_back(make_scorer(model, c));
  return out;
}

/// Scores every input; sample i uses stream `stream_offset + i`.
inline std::vector<double> score_all(const NamedScorer& scorer,
                                     const std::vector<Tensor>& inputs,
                                     std::uint64_t seed, std::uint64_t stream_offset,
                                     std::size_t threads) {
  std::vector<double> out(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const double v = scorer.fn(inputs[i], seed, stream_offset + i);
    if (!std::isfinite(v)) {
      throw DomainError(scorer.name + " produced a non-finite score for sample " +
                        std::to_string(i));
    }
    out[i] = v;
  });
  return out;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// OOD detection

struct OodMethodResult {
  std::string method;
  std::vector<double> auroc;  // per seed
  std::vector<double> aupr;
  Summary auroc_summary;
  Summary aupr_summary;
};

struct OodReport {
  std::vector<std::uint64_t> seeds;
  std::vector<OodMethodResult> methods;

  const OodMethodResult& at(const std::string& name) const {
    for (const auto& m : methods) {
      if (m.method == name) return m;
    }
    throw DomainError("no OOD result for method '" + name + "'");
  }

  void finalize() {
    for (auto& m : methods) {
      m.auroc_summary = summarize(m.auroc);
      m.aupr_summary = summarize(m.aupr);
    }
  }
};

struct OodOptions {
  double accuracy_floor = 0.9;
  std::size_t threads = 1;
};

/// Scores ID samples (streams 0..n_id-1) and OOD samples (streams
/// n_id..n_id+n_ood-1) once per seed; OOD is the positive class.
inline OodReport run_ood_experiment(const Model& model, const Dataset& id_data,
                                    const Dataset& ood_data,
                                    const std::vector<NamedScorer>& scorers,
                                    const std::vector<std::uint64_t>& seeds,
                                    const OodOptions& opts = {}) {
  if (id_data.empty() || ood_data.empty()) {
    throw ExperimentError("OOD experiment needs ID and OOD samples");
  }
  const double acc = evaluate(model, id_data).accuracy;
  if (acc < opts.accuracy_floor) {
    throw ExperimentError("model accuracy " + std::to_string(acc) +
                          " on ID data is below the floor " +
                          std::to_string(opts.accuracy_floor));
  }
  OodReport report;
  report.seeds = seeds;
  for (const auto& s : scorers) report.methods.push_back({s.name, {}, {}, {}, {}});
  for (std::uint64_t seed : seeds) {
    for (std::size_t m = 0; m < scorers.size(); ++m) {
      const auto id_scores = score_all(scorers[m], id_data.inputs, seed, 0, opts.threads);
      const auto ood_scores =
          score_all(scorers[m], ood_data.inputs, seed, id_data.size(), opts.threads);
      report.methods[m].auroc.push_back(auroc(ood_scores, id_scores));
      report.methods[m].aupr.push_back(aupr(ood_scores, id_scores));
    }
  }
  report.finalize();
  return report;
}

/// Two Gaussian clusters as ID data and a surrounding ring as OOD data.
struct TwoClusterTask {
  double spread = 2.0;     // cluster centers at (+/-spread, 0)
  double stddev = 0.3;
  std::size_t train_per_class = 500;
  std::size_t val_per_class = 50;
  std::size_t test_per_class = 200;
  double ring_radius = 4.0;
  double ring_noise = 0.1;
  std::size_t ring_size = 400;
};

struct TaskData {
  Dataset train, val, test, ood;
};

inline TaskData make_two_cluster_data(const TwoClusterTask& task, std::uint64_t seed) {
  TaskData d;
  d.train = gen_two_clusters(task.train_per_class, task.spread, task.stddev,
                             derive_seed(seed, 1));
  d.val = gen_two_clusters(task.val_per_class, task.spread, task.stddev,
                           derive_seed(seed, 2));
  d.test = gen_two_clusters(task.test_per_class, task.spread, task.stddev,
                            derive_seed(seed, 3));
  d.ood = gen_ood_ring(task.ring_radius, task.ring_size, task.ring_noise,
                       derive_seed(seed, 4));
  return d;
}

struct OodBenchmarkConfig {
  ModelConfig model = ModelConfig::mlp(2, {64, 64}, 2);
  OptimizerConfig optimizer;
  TwoClusterTask task;
  std::vector<ScorerConfig> methods;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  OodOptions options;
};

/// Per seed: fresh data, a freshly trained model and one scoring pass.
inline OodReport run_ood_benchmark(const OodBenchmarkConfig& cfg) {
  OodReport total;
  total.seeds = cfg.seeds;
  for (std::uint64_t seed : cfg.seeds) {
    const TaskData data = make_two_cluster_data(cfg.task, seed);
    OptimizerConfig opt = cfg.optimizer;
    opt.seed = derive_seed(seed, 5);
    const TrainReport trained = fit(cfg.model, opt, data.train, data.val);
    const OodReport r = run_ood_experiment(trained.model, data.test, data.ood,
                                           make_scorers(trained.model, cfg.methods),
                                           {seed}, cfg.options);
    if (total.methods.empty()) {
      for (const auto& m : r.methods) total.methods.push_back({m.method, {}, {}, {}, {}});
    }
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
      total.methods[m].auroc.push_back(r.methods[m].auroc.front());
      total.methods[m].aupr.push_back(r.methods[m].aupr.front());
    }
  }
  total.finalize();
  return total;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationMethodResult {
  std::string method;
  std::vector<double> raulc;  // per seed
  Summary summary;
};

struct CalibrationReport {
  std::vector<std::uint64_t> seeds;
  double accuracy = 0.0;
  std::vector<CalibrationMethodResult> methods;
  std::vector<std::string> warnings;

  const CalibrationMethodResult& at(const std::string& name) const {
    for (const auto& m : methods) {
      if (m.method == name) return m;
    }
    throw DomainError("no calibration result for method '" + name + "'");
  }
};

/// rAULC of each scorer against the correctness of the model's argmax
/// predictions on `test`.
inline CalibrationReport run_calibration_experiment(
    const Model& model, const Dataset& test, const std::vector<NamedScorer>& scorers,
    const std::vector<std::uint64_t>& seeds, std::size_t threads = 1) {
  if (test.size() < 2) throw ExperimentError("calibration needs >= 2 test samples");
  test.require_labels(model.num_classes());
  const auto probs = model.predict_batch(test.inputs);
  std::vector<int> correct(test.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    correct[i] = probs[i].argmax() == static_cast<std::size_t>(test.labels[i]);
    hits += correct[i];
  }
  CalibrationReport report;
  report.seeds = seeds;
  report.accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
  if (hits == 0) throw ExperimentError("calibration: every prediction is wrong");
  if (hits == test.size()) {
    report.warnings.push_back("all predictions correct; rAULC is 1 by convention");
  }
  for (const auto& s : scorers) {
    CalibrationMethodResult r{s.name, {}, {}};
    for (std::uint64_t seed : seeds) {
      r.raulc.push_back(raulc(correct, score_all(s, test.inputs, seed, 0, threads)));
    }
    r.summary = summarize(r.raulc);
    report.methods.push_back(std::move(r));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Active learning

struct ActiveLearnConfig {
  std::size_t initial = 4;    // m1, class-balanced
  std::size_t per_cycle = 2;  // m2
  std::size_t cycles = 10;
  /// Acquisition scorer; std::nullopt acquires uniformly at random.
  std::optional<ScorerConfig> scorer;
  ModelConfig model = ModelConfig::mlp(2, {64, 64}, 2);
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (initial < model.num_classes) throw ConfigError("m1 must be >= the class count");
    if (cycles < 1) throw ConfigError("cycles must be >= 1");
    if (scorer) scorer->validate();
  }
};

struct ActiveLearnCurve {
  std::string acquisition;
  std::vector<std::size_t> labeled;  // labeled-set size at each evaluation
  std::vector<double> accuracy;
  std::vector<double> nll;
  std::vector<std::size_t> acquired;  // indices into the full training set
  Summary accuracy_summary;
  Summary nll_summary;
};

/// The initial labeled set comes class-balanced from the first half of
/// `full_train`; the second half is the unlabeled pool. Each round retrains
/// from scratch, evaluates on `test`, then moves the m2 pool samples with
/// the highest scores (lowest pool index on ties) into the labeled set.
/// Yields cycles + 1 evaluations.
inline ActiveLearnCurve run_active_learning(const ActiveLearnConfig& cfg,
                                            const Dataset& full_train,
                                            const Dataset& val, const Dataset& test) {
  cfg.validate();
  const std::size_t half = full_train.size() / 2;
  SplitSpec spec;
  spec.train = {0, half};
  spec.initial_count = cfg.initial;
  spec.pool = {half, full_train.size()};
  spec.seed = derive_seed(cfg.seed, 11);
  const Split parts = split(full_train, spec, cfg.model.num_classes);
  if (parts.pool_indices.size() < cfg.cycles * cfg.per_cycle) {
    throw ExperimentError("pool of " + std::to_string(parts.pool_indices.size()) +
                          " samples cannot supply " + std::to_string(cfg.cycles) +
                          " cycles of " + std::to_string(cfg.per_cycle));
  }

  ActiveLearnCurve curve;
  curve.acquisition = cfg.scorer ? to_string(cfg.scorer->method) : "random";
  std::vector<std::size_t> labeled = parts.train_indices;
  std::vector<std::size_t> pool = parts.pool_indices;
  OptimizerConfig opt = cfg.optimizer;
  opt.seed = derive_seed(cfg.seed, 12);

  for (std::size_t cycle = 0; cycle <= cfg.cycles; ++cycle) {
    const Dataset train = full_train.subset(labeled, "labeled");
    const TrainReport trained = fit(cfg.model, opt, train, val);
    const Evaluation ev = evaluate(trained.model, test);
    curve.labeled.push_back(labeled.size());
    curve.accuracy.push_back(ev.accuracy);
    curve.nll.push_back(ev.nll);
    if (cycle == cfg.cycles || cfg.per_cycle == 0) continue;

    std::vector<double> scores(pool.size());
    const std::uint64_t round_seed = derive_seed(cfg.seed, 100 + cycle);
    if (cfg.scorer) {
      const NamedScorer s = make_scorer(trained.model, *cfg.scorer);
      std::vector<Tensor> xs;
      xs.reserve(pool.size());
      for (std::size_t i : pool) xs.push_back(full_train.inputs[i]);
      scores = score_all(s, xs, round_seed, 0, cfg.threads);
    } else {
      Rng rng(round_seed);
      for (double& v : scores) v = rng.uniform();
    }
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] > scores[b];
    });
    std::vector<bool> take(pool.size(), false);
    for (std::size_t k = 0; k < cfg.per_cycle; ++k) take[order[k]] = true;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (take[i]) {
        labeled.push_back(pool[i]);
        curve.acquired.push_back(pool[i]);
      } else {
        rest.push_back(pool[i]);
      }
    }
    pool = std::move(rest);
  }
  curve.accuracy_summary = summarize(curve.accuracy);
  curve.nll_summary = summarize(curve.nll);
  return curve;
}

// ---------------------------------------------------------------------------
// Proposition checks

struct PropositionReport {
  std::string proposition;
  std::map<std::string, std::vector<double>> measured;
  std::map<std::string, double> tolerances;
  bool pass = false;
  bool inconclusive = false;
  std::vector<std::string> notes;
};

namespace detail {

inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

struct LogisticSample {
  std::vector<double> x;
  std::vector<int> y;
};

inline LogisticSample draw_logistic(std::size_t n, double theta_true, Rng& rng) {
  LogisticSample s;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    s.x.push_back(x);
    s.y.push_back(rng.uniform() < sigmoid(theta_true * x) ? 1 : 0);
  }
  return s;
}

inline double logistic_loglik(const LogisticSample& s, double theta) {
  double ll = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const double z = theta * s.x[i];
    ll += s.y[i] ? log_sigmoid(z) : log_sigmoid(-z);
  }
  return ll;
}

}  // namespace detail

struct PosteriorCheck {
  double sup_distance = 0.0;   // sup |F_posterior - F_gaussian| on the grid
  double mle = 0.0;
  double gaussian_sd = 0.0;
  double posterior_mass = 0.0;  // trapezoid integral after normalization
};

/// Grid posterior (flat prior on [-5, 5], step 1e-3) of a 1-parameter
/// logistic model versus N(theta*, 1 / (n I(theta*))). theta* is the grid
/// argmax polished by Newton steps on the log-likelihood.
inline PosteriorCheck logistic_posterior_check(std::size_t n, std::uint64_t seed,
                                               double theta_true = 1.0) {
  constexpr double lo = -5.0, hi = 5.0, step = 1e-3;
  const std::size_t points = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
  detail::LogisticSample s;
  for (std::uint64_t sub = 0;; ++sub) {
    Rng rng(derive_seed(seed, sub));
    s = detail::draw_logistic(n, theta_true, rng);
    const auto ones = std::count(s.y.begin(), s.y.end(), 1);
    if (ones != 0 && static_cast<std::size_t>(ones) != n) break;
  }
  std::vector<double> grid(points), ll(points);
  std::size_t best = 0;
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = lo + step * static_cast<double>(i);
    ll[i] = detail::logistic_loglik(s, grid[i]);
    if (ll[i] > ll[best]) best = i;
  }
  double mle = grid[best];
  auto info_at = [&](double theta) {
    double info = 0.0;
    for (double x : s.x) {
      const double p = detail::sigmoid(theta * x);
      info += x * x * p * (1.0 - p);
    }
    return info;  // n * average Fisher information
  };
  for (int it = 0; it < 20; ++it) {
    double score = 0.0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      score += s.x[i] * (s.y[i] - detail::sigmoid(mle * s.x[i]));
    }
    const double delta = score / info_at(mle);
    mle += delta;
    if (std::abs(delta) < 1e-14) break;
  }
  if (!(mle > lo && mle < hi)) mle = grid[best];
  const double sd = 1.0 / std::sqrt(info_at(mle));

  std::vector<double> density(points);
  for (std::size_t i = 0; i < points; ++i) density[i] = std::exp(ll[i] - ll[best]);
  double mass = 0.0;
  for (std::size_t i = 1; i < points; ++i) mass += 0.5 * step * (density[i - 1] + density[i]);
  for (double& d : density) d /= mass;

  PosteriorCheck out;
  out.mle = mle;
  out.gaussian_sd = sd;
  double cdf = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    if (i > 0) cdf += 0.5 * step * (density[i - 1] + density[i]);
    const double g = detail::normal_cdf((grid[i] - mle) / sd);
    out.sup_distance = std::max(out.sup_distance, std::abs(cdf - g));
  }
  out.posterior_mass = cdf;
  return out;
}

/// The posterior's Gaussian approximation improves with data: the sup
/// distance must strictly decrease along `n_values`.
inline PropositionReport verify_gaussian_posterior(const std::vector<std::size_t>& n_values,
                                                   std::uint64_t seed,
                                                   std::size_t threads = 1) {
  PropositionReport r;
  r.proposition = "gaussian_posterior";
  std::vector<PosteriorCheck> checks(n_values.size());
  parallel_for(n_values.size(), threads, [&](std::size_t i) {
    checks[i] = logistic_posterior_check(n_values[i], derive_seed(seed, n_values[i]));
  });
  bool decreasing = true;
  double worst_mass_error = 0.0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    r.measured["n"].push_back(static_cast<double>(n_values[i]));
    r.measured["sup_distance"].push_back(checks[i].sup_distance);
    r.measured["mle"].push_back(checks[i].mle);
    r.measured["gaussian_sd"].push_back(checks[i].gaussian_sd);
    r.measured["posterior_mass"].push_back(checks[i].posterior_mass);
    worst_mass_error = std::max(worst_mass_error, std::abs(checks[i].posterior_mass - 1.0));
    if (i > 0 && !(checks[i].sup_distance < checks[i - 1].sup_distance)) decreasing = false;
  }
  r.tolerances["posterior_mass"] = 1e-6;
  r.pass = decreasing && worst_mass_error <= 1e-6;
  return r;
}

/// Moves an input perturbation into the first dense layer:
/// dW[k][j] = W[k][j] * dx[k] / x[k], so that x^T (W + dW) = (x + dx)^T W.
/// Coordinates with x[k] == 0 cannot be transferred and are skipped (their
/// dx is treated as 0 on both sides).
inline PropositionReport verify_perturbation_transfer(const Model& model, const Tensor& x,
                                                      const Tensor& dx) {
  if (model.config().architecture != Architecture::mlp) {
    throw DomainError("perturbation transfer needs a dense first layer");
  }
  x.require_same_shape(dx, "verify_perturbation_transfer");
  PropositionReport r;
  r.proposition = "perturbation_transfer";
  ParameterSet shifted = model.parameters();
  Tensor& w = shifted[0];
  const std::size_t in = w.dim(0), out = w.dim(1);
  Tensor effective_dx = dx;
  for (std::size_t k = 0; k < in; ++k) {
    if (x[k] == 0.0) {
      effective_dx[k] = 0.0;
      r.measured["skipped_coordinates"].push_back(static_cast<double>(k));
      continue;
    }
    const double ratio = dx[k] / x[k];
    for (std::size_t j = 0; j < out; ++j) w.at(k, j) += w.at(k, j) * ratio;
  }
  Tensor moved = x;
  moved += effective_dx;
  ForwardOptions o;
  o.parameter_grads = false;
  o.parameters = &shifted;
  ForwardPass a = model.forward(x, o);
  const Tensor lhs = a.tape.value(a.logits);
  const Tensor rhs = model.logits(moved).reshaped(lhs.shape());
  double dev = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) dev = std::max(dev, std::abs(lhs[i] - rhs[i]));
  r.measured["max_deviation"] = {dev};
  r.tolerances["max_deviation"] = 1e-10;
  r.pass = dev <= 1e-10;
  return r;
}

/// Transfer check over freshly initialized models with Gaussian inputs and
/// input perturbations of scale `dx_scale`.
inline PropositionReport verify_perturbation_transfer_random(const ModelConfig& config,
                                                             std::size_t models,
                                                             double dx_scale,
                                                             std::uint64_t seed) {
  PropositionReport r;
  r.proposition = "perturbation_transfer";
  r.tolerances["max_deviation"] = 1e-10;
  double worst = 0.0;
  r.pass = true;
  for (std::size_t i = 0; i < models; ++i) {
    const Model model = Model::initialized(config, derive_seed(seed, 2 * i));
    Rng rng(derive_seed(seed, 2 * i + 1));
    Tensor x(config.input_shape), dx(config.input_shape);
    for (double& v : x.data()) v = rng.normal();
    for (double& v : dx.data()) v = dx_scale * rng.normal();
    const PropositionReport one = verify_perturbation_transfer(model, x, dx);
    const double dev = one.measured.at("max_deviation").front();
    r.measured["max_deviation_per_model"].push_back(dev);
    worst = std::max(worst, dev);
    r.pass = r.pass && one.pass;
  }
  r.measured["max_deviation"] = {worst};
  return r;
}

struct GradientVanishingConfig {
  ModelConfig model = ModelConfig::mlp(2, {64, 64}, 2);
  OptimizerConfig optimizer = [] {
    OptimizerConfig o;
    o.weight_decay = 0.0;
    o.max_epochs = 150;
    o.selection = ModelSelection::last_epoch;
    return o;
  }();
  TwoClusterTask task = [] {
    TwoClusterTask t;
    t.train_per_class = 1000;
    t.test_per_class = 100;
    t.ring_size = 200;
    return t;
  }();
  double loss_floor = 1e-3;
  double ratio = 0.2;
  std::vector<std::size_t> checkpoints;  // epochs at which ID medians are logged
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

inline std::vector<double> regrad_scores(const Model& model,
                                         const std::vector<Tensor>& inputs,
                                         std::size_t threads) {
  const NamedScorer s = make_scorer(model, ScorerConfig::defaults(Method::regrad));
  return score_all(s, inputs, 0, 0, threads);
}

/// Trains to a small loss on dense ID data and compares REGrad medians on
/// ID test points against OOD ring points.
inline PropositionReport verify_gradient_vanishing(const GradientVanishingConfig& cfg) {
  PropositionReport r;
  r.proposition = "gradient_vanishing";
  const TaskData data = make_two_cluster_data(cfg.task, cfg.seed);
  OptimizerConfig opt = cfg.optimizer;
  opt.seed = derive_seed(cfg.seed, 5);
  const TrainReport trained =
      fit(cfg.model, opt, data.train, data.val, [&](std::size_t epoch, const Model& m) {
        if (std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), epoch) ==
            cfg.checkpoints.end()) {
          return;
        }
        r.measured["checkpoint_epoch"].push_back(static_cast<double>(epoch));
        r.measured["checkpoint_train_loss"].push_back(evaluate(m, data.train).nll);
        r.measured["checkpoint_id_median"].push_back(
            median(regrad_scores(m, data.test.inputs, cfg.threads)));
      });
  const double loss = evaluate(trained.model, data.train).nll;
  const double id_med = median(regrad_scores(trained.model, data.test.inputs, cfg.threads));
  const double ood_med = median(regrad_scores(trained.model, data.ood.inputs, cfg.threads));
  r.measured["train_loss"] = {loss};
  r.measured["id_median"] = {id_med};
  r.measured["ood_median"] = {ood_med};
  r.tolerances["loss_floor"] = cfg.loss_floor;
  r.tolerances["ratio"] = cfg.ratio;
  if (!(loss < cfg.loss_floor)) {
    r.inconclusive = true;
    r.pass = false;
    r.notes.push_back("training loss did not reach the floor");
    return r;
  }
  r.pass = id_med <= cfg.ratio * ood_med;
  return r;
}

/// Monte-Carlo check that E[KL(p(theta*) || p(theta* + dtheta))] stays
/// below sum_c p_c ||g_c||_2 * E||dtheta|| for small isotropic dtheta.
inline PropositionReport verify_exgrad_bound(const Model& model,
                                             const std::vector<Tensor>& inputs,
                                             double sigma, std::size_t trials,
                                             std::uint64_t seed, std::size_t threads = 1,
                                             double slack = 1.05,
                                             double required_fraction = 0.95) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  if (sigma > 1e-2) {
    throw ConfigError("sigma " + std::to_string(sigma) +
                      " is outside the small-perturbation regime (<= 1e-2)");
  }
  if (trials < 1 || inputs.empty()) throw DomainError("need inputs and trials");
  constexpr double kAbsoluteFloor = 1e-15;
  PropositionReport r;
  r.proposition = "exgrad_bound";
  std::vector<double> kl(inputs.size()), bound(inputs.size());
  ScorerConfig ex = ScorerConfig::defaults(Method::exgrad);
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const double grad_term = exgrad_score(model, inputs[i], ex).value;
    const ProbVector clean = model.predict_proba(inputs[i]);
    Rng rng(derive_seed(seed, i));
    double kl_sum = 0.0, norm_sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const PerturbationDraw d = draw_parameter_noise(model.parameters(), sigma, rng);
      ParameterSet perturbed = model.parameters();
      double sq = 0.0;
      for (std::size_t k = 0; k < perturbed.size(); ++k) {
        perturbed[k] += d.noise[k];
        sq += d.noise[k].squared_norm();
      }
      norm_sum += std::sqrt(sq);
      kl_sum += kl_divergence(clean, model.predict_proba(inputs[i], &perturbed));
    }
    kl[i] = kl_sum / static_cast<double>(trials);
    bound[i] = grad_term * norm_sum / static_cast<double>(trials);
  });
  std::size_t within = 0;
  std::vector<double> ratios;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (kl[i] <= slack * bound[i] + kAbsoluteFloor) ++within;
    if (bound[i] > 0.0) ratios.push_back(kl[i] / bound[i]);
  }
  const double fraction = static_cast<double>(within) / static_cast<double>(inputs.size());
  r.measured["kl"] = kl;
  r.measured["bound"] = bound;
  r.measured["fraction_within"] = {fraction};
  r.measured["mean_ratio"] = {ratios.empty() ? 0.0 : summarize(ratios).mean};
  r.tolerances["slack"] = slack;
  r.tolerances["required_fraction"] = required_fraction;
  r.tolerances["absolute_floor"] = kAbsoluteFloor;
  r.tolerances["sigma"] = sigma;
  r.pass = fraction >= required_fraction;
  return r;
}

/// Runs the bound check for each sigma (largest first). Passes iff every
/// check passes and the median KL/bound ratio strictly decreases as sigma
/// shrinks.
inline PropositionReport verify_exgrad_bound_sweep(const Model& model,
                                                   const std::vector<Tensor>& inputs,
                                                   const std::vector<double>& sigmas,
                                                   std::size_t trials, std::uint64_t seed,
                                                   std::size_t threads = 1) {
  PropositionReport r;
  r.proposition = "exgrad_bound";
  r.pass = !sigmas.empty();
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    const PropositionReport one =
        verify_exgrad_bound(model, inputs, sigmas[k], trials, derive_seed(seed, k), threads);
    std::vector<double> ratios;
    const auto& kl = one.measured.at("kl");
    const auto& bound = one.measured.at("bound");
    for (std::size_t i = 0; i < kl.size(); ++i) {
      if (bound[i] > 0.0) ratios.push_back(kl[i] / bound[i]);
    }
    const double med = ratios.empty() ? 0.0 : median(ratios);
    r.measured["sigma"].push_back(sigmas[k]);
    r.measured["fraction_within"].push_back(one.measured.at("fraction_within").front());
    r.measured["median_ratio"].push_back(med);
    if (!one.pass) r.pass = false;
    if (!(med < previous)) r.pass = false;
    previous = med;
    if (k == 0) {
      r.tolerances = one.tolerances;
      r.tolerances.erase("sigma");
    }
  }
  return r;
}

}  // namespace guq
