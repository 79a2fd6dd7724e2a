// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset. Exit status is nonzero if any
// selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "guq/guq.hpp"
#include "metric_oracles.hpp"
#include "test_support.hpp"

using namespace guq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

RunConfig demo_config() { return load_run_config(GUQ_DEMO_CONFIG); }

// ---------------------------------------------------------------------------
// 1. Gradient correctness against an independent long-double forward pass.

using LD = long double;

struct RefTensor {
  Shape shape;
  std::vector<LD> v;
};

// Log-probabilities of every class, recomputed from the layout without the
// tape: valid cross-correlation, ReLU, 2x2 floored max-pool, x W + b.
std::vector<LD> reference_log_probs(const ModelConfig& cfg,
                                    const std::vector<RefTensor>& params, const Tensor& x) {
  std::vector<LD> h(x.values().begin(), x.values().end());
  std::size_t next = 0;
  if (cfg.architecture == Architecture::small_cnn) {
    std::size_t ch = cfg.input_shape[0], rows = cfg.input_shape[1], cols = cfg.input_shape[2];
    for (std::size_t layer = 0; layer < cfg.conv.size(); ++layer) {
      const RefTensor& k = params[next++];
      const RefTensor& b = params[next++];
      const std::size_t out = k.shape[0], kh = k.shape[2], kw = k.shape[3];
      const std::size_t orows = rows - kh + 1, ocols = cols - kw + 1;
      std::vector<LD> y(out * orows * ocols);
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < orows; ++i) {
          for (std::size_t j = 0; j < ocols; ++j) {
            LD s = b.v[o];
            for (std::size_t c = 0; c < ch; ++c) {
              for (std::size_t u = 0; u < kh; ++u) {
                for (std::size_t w = 0; w < kw; ++w) {
                  s += h[(c * rows + i + u) * cols + j + w] * k.v[((o * ch + c) * kh + u) * kw + w];
                }
              }
            }
            y[(o * orows + i) * ocols + j] = std::max<LD>(s, 0);
          }
        }
      }
      h = std::move(y);
      ch = out;
      rows = orows;
      cols = ocols;
    }
    const std::size_t pr = rows / 2, pc = cols / 2;
    std::vector<LD> pooled(ch * pr * pc);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t i = 0; i < pr; ++i) {
        for (std::size_t j = 0; j < pc; ++j) {
          LD m = h[(c * rows + 2 * i) * cols + 2 * j];
          for (std::size_t u = 0; u < 2; ++u) {
            for (std::size_t w = 0; w < 2; ++w) {
              m = std::max(m, h[(c * rows + 2 * i + u) * cols + 2 * j + w]);
            }
          }
          pooled[(c * pr + i) * pc + j] = m;
        }
      }
    }
    h = std::move(pooled);
  }
  const std::size_t dense = cfg.hidden.size() + 1;
  for (std::size_t layer = 0; layer < dense; ++layer) {
    const RefTensor& w = params[next++];
    const std::size_t in = w.shape[0], out = w.shape[1];
    std::vector<LD> y(out, 0);
    if (cfg.dense_bias) y = params[next++].v;
    for (std::size_t j = 0; j < out; ++j) {
      for (std::size_t k = 0; k < in; ++k) y[j] += h[k] * w.v[k * out + j];
      if (layer + 1 < dense) y[j] = std::max<LD>(y[j], 0);
    }
    h = std::move(y);
  }
  const LD mx = *std::max_element(h.begin(), h.end());
  LD s = 0;
  for (LD z : h) s += std::exp(z - mx);
  for (LD& z : h) z = z - mx - std::log(s);
  return h;
}

ModelConfig random_config(Rng& rng, bool cnn) {
  if (!cnn) {
    std::vector<std::size_t> hidden(rng.below(4));
    for (auto& w : hidden) w = 1 + rng.below(8);
    return ModelConfig::mlp(1 + rng.below(4), hidden, 2 + rng.below(3));
  }
  const std::size_t ch = 1 + rng.below(2), side = 5 + rng.below(3);
  std::vector<ConvSpec> conv(1 + rng.below(2));
  for (auto& c : conv) c = {1 + rng.below(3), 2};
  std::vector<std::size_t> hidden(rng.below(2));
  for (auto& w : hidden) w = 2 + rng.below(5);
  return ModelConfig::small_cnn({ch, side, side}, conv, hidden, 2 + rng.below(2));
}

Model random_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet p = init_parameters(cfg, seed);
  Rng rng(derive_seed(seed, 1));
  const auto layout = parameter_layout(cfg);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (layout[i].is_bias) {
      for (double& v : p[i].data()) v = 0.1 * rng.normal();
    }
  }
  return Model(cfg, p);
}

Tensor random_input(const Shape& shape, Rng& rng) {
  Tensor x(shape);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

Outcome gradient_correctness() {
  constexpr double h = 1e-5, tol = 1e-5;
  // Relative error is |g - fd| / max(|g|, |fd|, floor); the floor only
  // matters for gradients that are zero up to rounding.
  constexpr double floor = 1e-8;
  double worst = 0.0;
  std::size_t checked = 0, failures = 0;
  std::string first_failure;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng(derive_seed(1001, i));
    const ModelConfig cfg = random_config(rng, i % 4 == 3);
    const Model model = random_model(cfg, derive_seed(1002, i));
    const Tensor x = random_input(cfg.input_shape, rng);
    const ClassGradients cg = per_class_gradients(model, x);

    std::vector<RefTensor> params;
    for (const auto& e : model.parameters().entries()) {
      params.push_back({e.value.shape(), {e.value.values().begin(), e.value.values().end()}});
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t k = 0; k < params[t].v.size(); ++k) {
        const LD saved = params[t].v[k];
        params[t].v[k] = saved + h;
        const auto up = reference_log_probs(cfg, params, x);
        params[t].v[k] = saved - h;
        const auto down = reference_log_probs(cfg, params, x);
        params[t].v[k] = saved;
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
          const double fd = static_cast<double>((up[c] - down[c]) / (2 * h));
          const double g = cg.per_class[c][t][k];
          const double err =
              std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
          worst = std::max(worst, err);
          ++checked;
          if (err > tol) {
            if (failures++ == 0) {
              first_failure = " first failure: config " + std::to_string(i) + " tensor " +
                              std::to_string(t) + " entry " + std::to_string(k) +
                              " class " + std::to_string(c) + " g=" + fmt(g, 10) +
                              " fd=" + fmt(fd, 10);
            }
          }
        }
      }
    }
  }
  return {failures == 0, std::to_string(checked) + " gradient entries, max rel error " +
                             fmt(worst, 3) + ", " + std::to_string(failures) + " above " +
                             fmt(tol) + first_failure};
}

// ---------------------------------------------------------------------------

Outcome negrad_degeneracy() {
  double worst = 0.0;
  bool ok = true;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng(derive_seed(2001, i));
    const ModelConfig cfg = random_config(rng, i % 5 == 4);
    const Model model = random_model(cfg, derive_seed(2002, i));
    Tensor x = random_input(cfg.input_shape, rng);
    x.scale(1.0 + 3.0 * rng.uniform());
    const double ne = score(model, x, ScorerConfig::defaults(Method::negrad)).value;
    const double ex = score(model, x, ScorerConfig::defaults(Method::exgrad)).value;
    worst = std::max(worst, ne / (1.0 + ex));
    ok = ok && ne <= 1e-8 * (1.0 + ex);
  }
  return {ok, "max negrad / (1 + exgrad) = " + fmt(worst, 3) + " (limit 1e-08)"};
}

Outcome closed_form_scores() {
  const Model m = test_support::reference_model(0.8);
  const Tensor x = test_support::reference_input();
  const double p = 0.8, q = 0.2, r2 = std::sqrt(2.0);
  struct Case {
    Method method;
    double exact;
    double quoted;
  };
  const std::vector<Case> cases{
      {Method::exgrad, 2 * p * q * r2, 0.45255},
      {Method::regrad, std::sqrt(p) * q * r2 + std::sqrt(q) * p * r2, 0.75895},
      {Method::ungrad, (p + q) * r2 / 2, 0.70711},
      {Method::gradnorm, (p - q) / r2, 0.42426},
      {Method::entropy, -p * std::log(p) - q * std::log(q), 0.50040},
      {Method::vterm, std::abs(p - 0.5) + std::abs(q - 0.5), 0.6},
  };
  bool ok = true;
  std::ostringstream detail;
  for (const auto& c : cases) {
    const double got = score(m, x, ScorerConfig::defaults(c.method)).value;
    // The quoted values are the closed forms rounded to 5 decimals.
    ok = ok && std::abs(got - c.exact) <= 1e-6 && std::abs(c.exact - c.quoted) <= 5e-6;
    detail << to_string(c.method) << "=" << fmt(got, 7) << " ";
  }
  return {ok, detail.str()};
}

Outcome metric_oracles() {
  Rng rng(4001);
  double worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t total = 2 + rng.below(99);
    const std::size_t np = 1 + rng.below(total - 1), nn = total - np;
    std::vector<double> pos(np), neg(nn);
    for (double& v : pos) v = static_cast<double>(rng.below(12)) / 4.0;
    for (double& v : neg) v = static_cast<double>(rng.below(12)) / 4.0 - 0.5;
    worst = std::max(worst, std::abs(auroc(pos, neg) - test_support::brute_auroc(pos, neg)));
    worst = std::max(worst, std::abs(aupr(pos, neg) - test_support::brute_aupr(pos, neg)));
  }
  const std::vector<int> correct{1, 1, 0, 0};
  const double oracle = raulc(correct, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const double reversed = raulc(correct, std::vector<double>{0.4, 0.3, 0.2, 0.1});
  return {worst <= 1e-12 && oracle == 1.0 && reversed == -1.0,
          "max |metric - brute force| = " + fmt(worst, 3) + ", rAULC oracle " + fmt(oracle) +
              ", reversed " + fmt(reversed)};
}

Outcome identity_reductions() {
  std::size_t mismatches = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    Rng rng(derive_seed(5001, i));
    const ModelConfig cfg = random_config(rng, i % 4 == 3);
    const Model m = random_model(cfg, derive_seed(5002, i));
    const Tensor x = random_input(cfg.input_shape, rng);
    const ClassGradients cg = per_class_gradients(m, x);

    // lambda = 0: unweighted norms of the per-class gradients.
    double ex = 0.0, re = 0.0, un = 0.0;
    for (std::size_t c = 0; c < cg.per_class.size(); ++c) {
      const double n = cg.per_class[c].norm(NormOrder::l2);
      ex += cg.probs[c] * n;
      re += std::sqrt(cg.probs[c] * n * n);
      un += n;
    }
    un /= static_cast<double>(cg.per_class.size());
    ScorerConfig c = ScorerConfig::defaults(Method::exgrad);
    c.lambda = 0.0;
    mismatches += score(m, x, c).value != ex;
    c.method = Method::regrad;
    mismatches += score(m, x, c).value != re;
    c.method = Method::ungrad;
    mismatches += score(m, x, c).value != un;

    // N = 0 smoothing: the raw gradients, bit for bit.
    mismatches += !(smoothed_per_class_gradients(m, x, 0.02, 0, 7).per_class == cg.per_class);
    ScorerConfig star = ScorerConfig::defaults(Method::regrad_star);
    star.lambda = 0.0;
    star.n_perturb = 0;
    mismatches += score(m, x, star).value != re;

    // Perturbations forced to zero.
    PerturbationDraw zero_x{PerturbationDraw::Kind::input, {Tensor(x.shape())}, 0};
    mismatches += perturb_x_from_draws(m, x, std::vector<PerturbationDraw>{zero_x}) != 0.0;
    PerturbationDraw zero_theta{PerturbationDraw::Kind::parameter, {}, 0};
    for (const auto& e : m.parameters().entries()) zero_theta.noise.emplace_back(e.value.shape());
    mismatches +=
        perturb_theta_from_draws(m, x, std::vector<PerturbationDraw>{zero_theta}) != 0.0;
    ScorerConfig aa = ScorerConfig::defaults(Method::mc_aa);
    aa.fgsm_bound = 0.0;
    mismatches += score(m, x, aa).value != 0.0;

    // Dropout rate 0.
    ScorerConfig d = ScorerConfig::defaults(Method::inserted_dropout);
    d.dropout_rate = 0.0;
    d.mc_samples = 10;
    mismatches += score(m, x, d).value != 0.0;
    d.aggregation = EnsembleAggregation::mean_kl;
    mismatches += score(m, x, d).value != 0.0;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 40 models x 10 identities"};
}

// ---------------------------------------------------------------------------
// Propositions and experiments on the shipped demo configuration.

Outcome transfer() {
  const PropositionReport r = verify_transfer(demo_config());
  return {r.pass && r.measured.at("max_deviation_per_model").size() == 50,
          "max output deviation " + fmt(r.measured.at("max_deviation").front(), 3) +
              " over 50 models (limit 1e-10)"};
}

Outcome vanishing() {
  bool ok = true;
  std::ostringstream detail;
  for (const auto& r : verify_vanishing(demo_config())) {
    ok = ok && r.pass && !r.inconclusive;
    detail << "[" << r.notes.back() << ": loss " << fmt(r.measured.at("train_loss")[0], 3)
           << ", id " << fmt(r.measured.at("id_median")[0], 3) << ", ood "
           << fmt(r.measured.at("ood_median")[0], 3)
           << (r.inconclusive ? ", inconclusive" : r.pass ? "" : ", id > 0.2 ood") << "] ";
  }
  return {ok, detail.str()};
}

Outcome bound() {
  const RunConfig cfg = demo_config();
  const auto& ps = cfg.propositions;
  const bool setup = ps.bound_sigmas == std::vector<double>{1e-3, 5e-4, 1e-4} &&
                     ps.bound_trials == 100 && ps.bound_inputs == 100;
  const PropositionReport r = verify_bound(cfg);
  std::ostringstream detail;
  const auto& frac = r.measured.at("fraction_within");
  const auto& ratio = r.measured.at("median_ratio");
  for (std::size_t k = 0; k < frac.size(); ++k) {
    detail << "sigma " << fmt(r.measured.at("sigma")[k]) << ": within " << fmt(frac[k], 3)
           << ", median KL/bound " << fmt(ratio[k], 3) << "; ";
  }
  return {setup && r.pass, detail.str()};
}

Outcome posterior() {
  bool ok = true;
  std::ostringstream detail;
  for (const auto& r : verify_posterior(demo_config())) {
    ok = ok && r.pass;
    detail << "[";
    for (double d : r.measured.at("sup_distance")) detail << fmt(d, 3) << " ";
    detail << "] ";
  }
  return {ok, "sup distances per seed " + detail.str()};
}

Outcome ood_trend() {
  const RunConfig cfg = demo_config();
  OodBenchmarkConfig b;
  b.model = cfg.model;
  b.optimizer = cfg.optimizer;
  b.task = cfg.data;
  b.seeds = cfg.seeds;
  b.options = {cfg.accuracy_floor, cfg.threads};
  for (Method m : {Method::regrad_star, Method::exgrad, Method::negrad, Method::gradnorm}) {
    b.methods.push_back(cfg.scorer.for_method(m));
  }
  const OodReport r = run_ood_benchmark(b);
  const double star = r.at("regrad_star").auroc_summary.mean;
  const double ex = r.at("exgrad").auroc_summary.mean;
  const double ne = r.at("negrad").auroc_summary.mean;
  const double gn = r.at("gradnorm").auroc_summary.mean;
  std::vector<std::string> misses;
  if (!(star >= 0.90)) misses.push_back("regrad_star < 0.90");
  if (!(star >= ex - 0.01)) misses.push_back("regrad_star < exgrad - 0.01");
  if (!(ne <= 0.60)) misses.push_back("negrad > 0.60");
  if (!(gn <= 0.60)) misses.push_back("gradnorm > 0.60");
  std::string detail = "mean AUROC regrad_star " + fmt(star, 4) + ", exgrad " + fmt(ex, 4) +
                       ", negrad " + fmt(ne, 4) + ", gradnorm " + fmt(gn, 4);
  for (const auto& m : misses) detail += "; " + m;
  return {misses.empty(), detail};
}

Outcome active_learning_trend() {
  RunConfig cfg = demo_config();
  const auto& al = cfg.active_learning;
  const bool setup = al.initial == 4 && al.per_cycle == 2 && al.cycles == 10 &&
                     al.acquisition == "regrad_star" && cfg.seeds.size() == 5;
  bool ok = setup;
  std::ostringstream detail;
  for (const auto& p : run_active_learning_pairs(cfg)) {
    const double s = p.scored.accuracy.back(), r = p.random.accuracy.back();
    ok = ok && s >= r;
    detail << "seed " << p.seed << ": " << fmt(s, 4) << " vs " << fmt(r, 4) << "; ";
  }
  return {ok, "final accuracy regrad_star vs random " + detail.str()};
}

// Small configuration covering every experiment and scoring method.
RunConfig determinism_config() {
  RunConfig c;
  c.seed = 3;
  c.model = ModelConfig::mlp(2, {16, 16}, 2);
  c.optimizer.max_epochs = 15;
  c.data.train_per_class = 60;
  c.data.val_per_class = 10;
  c.data.test_per_class = 40;
  c.data.ring_size = 40;
  c.methods.assign(std::begin(kAllMethods), std::end(kAllMethods));
  c.scorer.smoothing_samples = 8;
  c.scorer.perturb_samples = 8;
  c.scorer.mc_samples = 8;
  c.seeds = {1, 2};
  c.active_learning.cycles = 3;
  c.active_learning.train_per_class = 30;
  c.propositions.posterior_n = {50, 500};
  c.propositions.transfer_models = 5;
  c.propositions.vanishing_train_per_class = 60;
  c.propositions.vanishing_max_epochs = 10;
  c.propositions.bound_trials = 10;
  c.propositions.bound_inputs = 10;
  return c;
}

std::vector<std::string> all_reports(RunConfig cfg, std::size_t threads) {
  cfg.threads = threads;
  std::vector<std::string> out;
  for (const ExperimentOutput& e : {run_ood(cfg), run_calibration(cfg), run_active(cfg)}) {
    out.push_back(render_report(e.report));
    out.push_back(render_csv(e.rows));
  }
  out.push_back(render_report(propositions_to_json(run_propositions(cfg, "all"), cfg)));
  return out;
}

Outcome determinism() {
  const RunConfig cfg = determinism_config();
  const auto base = all_reports(cfg, 1);
  std::size_t differing = 0;
  for (std::size_t threads : {1, 3}) {
    const auto again = all_reports(cfg, threads);
    for (std::size_t i = 0; i < base.size(); ++i) differing += again[i] != base[i];
  }
  return {differing == 0, std::to_string(base.size()) +
                              " documents compared for threads 1 and 3, " +
                              std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 60, gradient_correctness},
      {2, "negrad degeneracy", 30, negrad_degeneracy},
      {3, "closed-form scorer oracle", 1, closed_form_scores},
      {4, "metric oracles", 10, metric_oracles},
      {5, "identity reductions", 10, identity_reductions},
      {6, "perturbation transfer", 10, transfer},
      {7, "gradient vanishing separation", 120, vanishing},
      {8, "exgrad KL bound", 120, bound},
      {9, "posterior Gaussian approximation", 60, posterior},
      {10, "OOD detection trend", 180, ood_trend},
      {11, "active learning trend", 180, active_learning_trend},
      {12, "determinism across thread counts", 60, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name
              << "): " << o.detail << " [" << fmt(secs, 3) << " s of " << c.budget_seconds
              << " s" << (in_time ? "" : ", over budget") << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
