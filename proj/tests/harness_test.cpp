#include <gtest/gtest.h>

#include <cmath>

#include "guq/harness.hpp"
#include "guq/runner.hpp"

using namespace guq;

namespace {

// Predicts class 1 iff x0 > 0, with confidence growing in |x0|.
Model sign_model(double scale = 4.0) {
  const ModelConfig c = ModelConfig::mlp(2, {}, 2);
  ParameterSet p = init_parameters(c, 0);
  p[0] = Tensor::matrix(2, 2, {-scale, scale, 0.0, 0.0});
  return Model(c, p);
}

Dataset ood_points(std::size_t n) { return gen_ood_ring(4.0, n, 0.1, 9); }

NamedScorer lookup_scorer(std::string name, std::function<double(const Tensor&)> f) {
  return {std::move(name), [f](const Tensor& x, std::uint64_t, std::uint64_t) { return f(x); }};
}

}  // namespace

TEST(Ood, OracleAndConstantScorers) {
  const Model m = sign_model();
  const Dataset id = gen_two_clusters(50, 2.0, 0.3, 1);
  const Dataset ood = ood_points(60);
  // The label is recoverable from the radius: ID points lie within 3.5 of
  // the origin, ring points beyond 3.7.
  const auto oracle = lookup_scorer("oracle", [](const Tensor& x) {
    return std::hypot(x[0], x[1]) > 3.6 ? 1.0 : 0.0;
  });
  const auto constant = lookup_scorer("constant", [](const Tensor&) { return 0.25; });
  const OodReport r = run_ood_experiment(m, id, ood, {oracle, constant}, {1, 2});
  EXPECT_EQ(r.at("oracle").auroc, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.at("oracle").aupr, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.at("constant").auroc, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(r.at("oracle").auroc_summary.std, 0.0);
  EXPECT_THROW(r.at("missing"), DomainError);
}

TEST(Ood, AccuracyFloorEnforced) {
  const Model m = sign_model();
  Dataset id = gen_two_clusters(20, 2.0, 0.3, 1);
  for (int& y : id.labels) y = 1 - y;
  const auto constant = lookup_scorer("constant", [](const Tensor&) { return 0.0; });
  EXPECT_THROW(run_ood_experiment(m, id, ood_points(5), {constant}, {1}), ExperimentError);
}

TEST(Ood, NonFiniteScoreRejected) {
  const auto bad = lookup_scorer("bad", [](const Tensor&) { return std::nan(""); });
  EXPECT_THROW(score_all(bad, {Tensor::vector({0.0, 0.0})}, 0, 0, 1), DomainError);
}

TEST(Ood, ThreadCountDoesNotChangeScores) {
  const Model m = Model::initialized(ModelConfig::mlp(2, {16}, 2), 3);
  const NamedScorer s = make_scorer(m, ScorerConfig::defaults(Method::regrad_star));
  const Dataset d = gen_two_clusters(20, 2.0, 0.3, 4);
  EXPECT_EQ(score_all(s, d.inputs, 5, 0, 1), score_all(s, d.inputs, 5, 0, 4));
}

TEST(Calibration, ConfidenceScorerBeatsRandomAndAntiOracleLoses) {
  const Model m = sign_model(1.0);
  const Dataset test = gen_two_clusters(200, 1.0, 1.0, 2);  // overlapping: mixed correctness
  auto one_minus_max = lookup_scorer("confidence", [&](const Tensor& x) {
    const ProbVector p = m.predict_proba(x);
    return 1.0 - p[p.argmax()];
  });
  // Uncertainty equal to correctness puts every correct sample last.
  auto anti = lookup_scorer("anti", [&](const Tensor& x) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test.inputs[i] == x) {
        return static_cast<double>(m.predict_proba(x).argmax() ==
                                   static_cast<std::size_t>(test.labels[i]));
      }
    }
    return 0.0;
  });
  const CalibrationReport r = run_calibration_experiment(m, test, {one_minus_max, anti}, {1});
  EXPECT_GT(r.accuracy, 0.5);
  EXPECT_LT(r.accuracy, 1.0);
  EXPECT_GT(r.at("confidence").raulc[0], 0.0);
  EXPECT_LT(r.at("anti").raulc[0], 0.0);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Calibration, RandomScorerAveragesNearZero) {
  const Model m = sign_model(1.0);
  const Dataset test = gen_two_clusters(200, 1.0, 1.0, 3);
  NamedScorer random{"random", [](const Tensor& x, std::uint64_t seed, std::uint64_t stream) {
                       (void)x;
                       return Rng(derive_seed(seed, stream)).uniform();
                     }};
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 100; ++s) seeds.push_back(s);
  const CalibrationReport r = run_calibration_experiment(m, test, {random}, seeds);
  EXPECT_LE(std::abs(r.at("random").summary.mean), 0.1);
}

TEST(Calibration, AllCorrectWarnsAllWrongThrows) {
  const Model m = sign_model();
  Dataset test = gen_two_clusters(20, 2.0, 0.3, 1);
  const auto constant = lookup_scorer("constant", [](const Tensor&) { return 0.0; });
  const CalibrationReport ok = run_calibration_experiment(m, test, {constant}, {1});
  EXPECT_EQ(ok.accuracy, 1.0);
  EXPECT_EQ(ok.at("constant").raulc[0], 1.0);
  EXPECT_EQ(ok.warnings.size(), 1u);
  for (int& y : test.labels) y = 1 - y;
  EXPECT_THROW(run_calibration_experiment(m, test, {constant}, {1}), ExperimentError);
}

namespace {

ActiveLearnConfig small_al(std::size_t per_cycle) {
  ActiveLearnConfig c;
  c.per_cycle = per_cycle;
  c.cycles = 3;
  c.model = ModelConfig::mlp(2, {8}, 2);
  c.optimizer.max_epochs = 20;
  c.optimizer.batch_size = 4;
  c.seed = 5;
  c.scorer = ScorerConfig::defaults(Method::exgrad);
  return c;
}

TaskData al_data() {
  TwoClusterTask t;
  t.train_per_class = 20;
  t.val_per_class = 10;
  t.test_per_class = 50;
  t.spread = 1.0;
  t.stddev = 0.8;
  return make_two_cluster_data(t, 6);
}

}  // namespace

TEST(ActiveLearning, NoAcquisitionGivesFlatCurve) {
  const TaskData d = al_data();
  const ActiveLearnCurve c = run_active_learning(small_al(0), d.train, d.val, d.test);
  ASSERT_EQ(c.accuracy.size(), 4u);
  for (std::size_t k = 1; k < c.accuracy.size(); ++k) {
    EXPECT_EQ(c.accuracy[k], c.accuracy[0]);
    EXPECT_EQ(c.nll[k], c.nll[0]);
    EXPECT_EQ(c.labeled[k], 4u);
  }
  EXPECT_TRUE(c.acquired.empty());
}

TEST(ActiveLearning, DeterministicAndGrowing) {
  const TaskData d = al_data();
  const ActiveLearnCurve a = run_active_learning(small_al(2), d.train, d.val, d.test);
  const ActiveLearnCurve b = run_active_learning(small_al(2), d.train, d.val, d.test);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.nll, b.nll);
  EXPECT_EQ(a.acquired, b.acquired);
  EXPECT_EQ(a.labeled, (std::vector<std::size_t>{4, 6, 8, 10}));
  for (std::size_t i : a.acquired) EXPECT_GE(i, d.train.size() / 2);  // from the pool half
}

TEST(ActiveLearning, RandomAcquisitionAndPoolTooSmall) {
  const TaskData d = al_data();
  ActiveLearnConfig c = small_al(2);
  c.scorer.reset();
  EXPECT_EQ(run_active_learning(c, d.train, d.val, d.test).acquisition, "random");
  c.per_cycle = 15;
  EXPECT_THROW(run_active_learning(c, d.train, d.val, d.test), ExperimentError);
}

TEST(Posterior, SmallSampleIsFurtherFromGaussian) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PosteriorCheck small = logistic_posterior_check(5, seed);
    const PosteriorCheck large = logistic_posterior_check(5000, seed);
    EXPECT_GT(small.sup_distance, large.sup_distance) << seed;
    EXPECT_NEAR(small.posterior_mass, 1.0, 1e-6);
    EXPECT_NEAR(large.posterior_mass, 1.0, 1e-6);
  }
}

TEST(Posterior, StrictlyDecreasingOverFiveSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PropositionReport r = verify_gaussian_posterior({50, 500, 5000}, seed);
    EXPECT_TRUE(r.pass) << seed;
  }
}

TEST(Transfer, ZeroPerturbationAndZeroCoordinate) {
  const Model m = Model::initialized(ModelConfig::mlp(3, {16, 16}, 2), 1);
  const Tensor x = Tensor::vector({0.5, -1.0, 2.0});
  const PropositionReport zero = verify_perturbation_transfer(m, x, Tensor(Shape{3}));
  EXPECT_EQ(zero.measured.at("max_deviation")[0], 0.0);
  EXPECT_TRUE(zero.pass);

  const PropositionReport skipped = verify_perturbation_transfer(
      m, Tensor::vector({0.5, 0.0, 2.0}), Tensor::vector({0.1, 0.3, -0.2}));
  EXPECT_EQ(skipped.measured.at("skipped_coordinates"), std::vector<double>{1.0});
  EXPECT_TRUE(skipped.pass);
}

TEST(Transfer, RandomModelsPassAndCnnRejected) {
  EXPECT_TRUE(verify_perturbation_transfer_random(ModelConfig::mlp(2, {64, 64}, 2), 50, 0.1, 3).pass);
  const Model cnn = Model::initialized(ModelConfig::small_cnn({1, 4, 4}, {{2, 2}}, {}, 2), 1);
  Tensor x({1, 4, 4});
  EXPECT_THROW(verify_perturbation_transfer(cnn, x, x), DomainError);
}

TEST(Vanishing, UntrainedModelIsInconclusive) {
  GradientVanishingConfig c;
  c.optimizer.max_epochs = 1;
  c.task.train_per_class = 20;
  c.seed = 1;
  const PropositionReport r = verify_gradient_vanishing(c);
  EXPECT_TRUE(r.inconclusive);
  EXPECT_FALSE(r.pass);
}

TEST(Vanishing, IdMediansShrinkAsTrainingLossFalls) {
  const RunConfig cfg;
  const GradientVanishingConfig v = vanishing_config(cfg, 1);
  const PropositionReport r = verify_gradient_vanishing(v);
  const auto& loss = r.measured.at("checkpoint_train_loss");
  const auto& med = r.measured.at("checkpoint_id_median");
  ASSERT_GE(loss.size(), 3u);
  for (std::size_t k = 1; k < loss.size(); ++k) {
    if (loss[k] < loss[k - 1]) EXPECT_LT(med[k], med[k - 1]) << "checkpoint " << k;
  }
}

TEST(Bound, SaturatedModelIsTriviallyWithin) {
  const ModelConfig c = ModelConfig::mlp(2, {}, 2);
  ParameterSet p = init_parameters(c, 0);
  p[0].scale(0.0);
  p[1] = Tensor::vector({40.0, 0.0});  // p = (1, ~4e-18) everywhere
  const Model m(c, p);
  const std::vector<Tensor> xs{Tensor::vector({0.1, 0.2}), Tensor::vector({-0.3, 0.0})};
  const PropositionReport r = verify_exgrad_bound(m, xs, 1e-3, 20, 1);
  EXPECT_TRUE(r.pass);
  for (double v : r.measured.at("bound")) EXPECT_LT(v, 1e-15);
}

TEST(Bound, SigmaOutsideSmallRegimeRejected) {
  const Model m = sign_model();
  const std::vector<Tensor> xs{Tensor::vector({0.1, 0.2})};
  EXPECT_THROW(verify_exgrad_bound(m, xs, 0.1, 5, 1), ConfigError);
  EXPECT_THROW(verify_exgrad_bound(m, xs, 0.0, 5, 1), DomainError);
}

TEST(Bound, HoldsOnRandomModelAndRatioShrinks) {
  const Model m = Model::initialized(ModelConfig::mlp(2, {16, 16}, 2), 4);
  std::vector<Tensor> xs;
  for (const Tensor& x : gen_two_clusters(10, 2.0, 0.3, 5).inputs) xs.push_back(x);
  const PropositionReport r = verify_exgrad_bound_sweep(m, xs, {1e-3, 5e-4, 1e-4}, 50, 6);
  EXPECT_TRUE(r.pass);
}

// Trained two-cluster models shared by the trend checks below.
class TrainedModels : public ::testing::Test {
 protected:
  struct Trained {
    Model model;
    TaskData data;
  };

  static void SetUpTestSuite() {
    const RunConfig cfg;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      TaskData d;
      TrainReport r = train_on_task(cfg, seed, &d);
      trained_->push_back({r.model, std::move(d)});
    }
  }

  static double mean_score(const Model& m, Method method, const std::vector<Tensor>& xs,
                           std::uint64_t stream_offset) {
    ScorerConfig c = RunConfig{}.scorer.for_method(method);
    const auto s = score_all(make_scorer(m, c), xs, 1, stream_offset, 1);
    double total = 0.0;
    for (double v : s) total += v;
    return total / s.size();
  }

  static inline std::vector<Trained>* trained_ = new std::vector<Trained>();
};

TEST_F(TrainedModels, PerturbThetaScoresOodAboveId) {
  for (const auto& t : *trained_) {
    const double id = mean_score(t.model, Method::perturb_theta, t.data.test.inputs, 0);
    const double ood = mean_score(t.model, Method::perturb_theta, t.data.ood.inputs,
                                  t.data.test.size());
    EXPECT_GT(ood, id);
  }
}

TEST_F(TrainedModels, InsertedDropoutScoresOodAboveId) {
  for (const auto& t : *trained_) {
    const double id = mean_score(t.model, Method::inserted_dropout, t.data.test.inputs, 0);
    const double ood = mean_score(t.model, Method::inserted_dropout, t.data.ood.inputs,
                                  t.data.test.size());
    EXPECT_GT(ood, id);
  }
}
