#pragma once

// Run configuration: strict nested JSON. Every key is optional; any key not
// listed here is rejected.
//
//   { "seed": 0, "threads": 1, "output_dir": "out",
//     "model":     { "architecture", "input_shape", "conv", "hidden", "num_classes",
//                    "dense_bias" },
//     "optimizer": { "lr", "lr_schedule", "momentum", "weight_decay", "batch_size",
//                    "max_epochs", "selection" },
//     "data":      { "spread", "stddev", "train_per_class", "val_per_class",
//                    "test_per_class", "ring_radius", "ring_noise", "ring_size" },
//     "scorer":    { "norm", "lambda", "smoothing_sigma", "smoothing_samples",
//                    "perturb_x_sigma", "perturb_theta_sigma", "perturb_samples",
//                    "fgsm_bound", "dropout_rate", "mc_samples", "aggregation" },
//     "experiment": { "methods", "seeds", "accuracy_floor",
//                     "calibration": { "stddev" },
//                     "active_learning": { "initial", "per_cycle", "cycles",
//                                          "acquisition", "train_per_class" },
//                     "propositions": { ... see PropositionSettings } } }

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "guq/errors.hpp"
#include "guq/harness.hpp"
#include "guq/model.hpp"
#include "guq/scorers.hpp"
#include "guq/training.hpp"

namespace guq {

/// Scorer hyperparameters shared by every method.
struct ScorerSettings {
  NormOrder norm = NormOrder::l2;
  double lambda = 0.3;
  double smoothing_sigma = 0.02;
  std::size_t smoothing_samples = 100;
  double perturb_x_sigma = 0.008;
  double perturb_theta_sigma = 0.008;
  std::size_t perturb_samples = 100;
  double fgsm_bound = 1e-4;
  double dropout_rate = 0.4;
  std::size_t mc_samples = 100;
  EnsembleAggregation aggregation = EnsembleAggregation::mutual_information;

  ScorerConfig for_method(Method m) const {
    ScorerConfig c;
    c.method = m;
    c.norm = norm;
    c.fgsm_bound = fgsm_bound;
    c.dropout_rate = dropout_rate;
    c.mc_samples = mc_samples;
    c.aggregation = aggregation;
    switch (m) {
      case Method::regrad_star:
        c.lambda = lambda;
        c.sigma = smoothing_sigma;
        c.n_perturb = smoothing_samples;
        break;
      case Method::perturb_x:
        c.sigma = perturb_x_sigma;
        c.n_perturb = perturb_samples;
        break;
      case Method::perturb_theta:
        c.sigma = perturb_theta_sigma;
        c.n_perturb = perturb_samples;
        break;
      default:
        break;
    }
    if (m == Method::regrad || m == Method::regrad_star) c.norm = NormOrder::l2;
    return c;
  }
};

struct ActiveLearnSettings {
  std::size_t initial = 4;
  std::size_t per_cycle = 2;
  std::size_t cycles = 10;
  std::string acquisition = "regrad_star";  // a method name or "random"
  std::size_t train_per_class = 100;
};

struct PropositionSettings {
  std::vector<std::size_t> posterior_n{50, 500, 5000};
  std::size_t transfer_models = 50;
  double transfer_dx_scale = 0.1;
  std::size_t vanishing_train_per_class = 1000;
  std::size_t vanishing_max_epochs = 30;
  double vanishing_weight_decay = 0.0;
  double vanishing_loss_floor = 1e-3;
  double vanishing_ratio = 0.2;
  std::vector<double> bound_sigmas{1e-3, 5e-4, 1e-4};
  std::size_t bound_trials = 100;
  std::size_t bound_inputs = 100;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string output_dir = "out";
  ModelConfig model = ModelConfig::mlp(2, {64, 64}, 2);
  OptimizerConfig optimizer;
  TwoClusterTask data;
  ScorerSettings scorer;
  std::vector<Method> methods{Method::regrad_star, Method::regrad, Method::exgrad,
                              Method::ungrad,      Method::negrad, Method::gradnorm,
                              Method::entropy,     Method::vterm};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double accuracy_floor = 0.9;
  double calibration_stddev = 1.0;
  ActiveLearnSettings active_learning;
  PropositionSettings propositions;

  std::vector<ScorerConfig> scorer_configs() const {
    std::vector<ScorerConfig> out;
    for (Method m : methods) out.push_back(scorer.for_method(m));
    return out;
  }

  void validate() const {
    model.validate();
    optimizer.validate();
    for (const auto& c : scorer_configs()) c.validate();
    if (seeds.empty()) throw ConfigError("experiment.seeds is empty");
    if (methods.empty()) throw ConfigError("experiment.methods is empty");
    if (!(calibration_stddev > 0.0)) throw ConfigError("calibration stddev must be > 0");
    if (active_learning.acquisition != "random") parse_method(active_learning.acquisition);
  }
};

namespace detail {

/// Reads keys from one JSON object and remembers which were consumed, so
/// leftovers can be reported as unknown.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  StrictObject child(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return StrictObject(j_.contains(key) ? j_.at(key) : empty, where_ + "." + key);
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline NormOrder parse_norm(const std::string& s) {
  if (s == "l1" || s == "L1") return NormOrder::l1;
  if (s == "l2" || s == "L2") return NormOrder::l2;
  throw ConfigError("unknown norm '" + s + "' (expected l1 or l2)");
}

inline std::string to_string(NormOrder n) { return n == NormOrder::l1 ? "l1" : "l2"; }

inline EnsembleAggregation parse_aggregation(const std::string& s) {
  if (s == "mutual_information") return EnsembleAggregation::mutual_information;
  if (s == "mean_kl") return EnsembleAggregation::mean_kl;
  throw ConfigError("unknown aggregation '" + s + "'");
}

inline std::string to_string(EnsembleAggregation a) {
  return a == EnsembleAggregation::mean_kl ? "mean_kl" : "mutual_information";
}

inline ModelSelection parse_selection(const std::string& s) {
  if (s == "best_validation") return ModelSelection::best_validation;
  if (s == "last_epoch") return ModelSelection::last_epoch;
  throw ConfigError("unknown model selection '" + s + "'");
}

inline std::string to_string(ModelSelection s) {
  return s == ModelSelection::last_epoch ? "last_epoch" : "best_validation";
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::StrictObject;
  RunConfig c;
  StrictObject root(j, "config");
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  root.read("output_dir", c.output_dir);

  {
    StrictObject m = root.child("model");
    std::string arch = to_string(c.model.architecture);
    m.read("architecture", arch);
    c.model.architecture = parse_architecture(arch);
    m.read("input_shape", c.model.input_shape);
    if (m.has("conv")) {
      c.model.conv.clear();
      const auto& conv = m.raw("conv");
      if (!conv.is_array()) throw ConfigError("config.model.conv: expected an array");
      for (std::size_t i = 0; i < conv.size(); ++i) {
        StrictObject layer(conv[i], "config.model.conv[" + std::to_string(i) + "]");
        ConvSpec spec;
        layer.read("filters", spec.filters);
        layer.read("kernel", spec.kernel);
        layer.finish();
        c.model.conv.push_back(spec);
      }
    } else {
      m.child("conv");
    }
    m.read("hidden", c.model.hidden);
    m.read("num_classes", c.model.num_classes);
    m.read("dense_bias", c.model.dense_bias);
    m.finish();
  }
  {
    StrictObject o = root.child("optimizer");
    if (o.has("lr") && o.has("lr_schedule")) {
      throw ConfigError("config.optimizer: give either lr or lr_schedule");
    }
    double lr = c.optimizer.lr_schedule.front().second;
    o.read("lr", lr);
    c.optimizer.lr_schedule = {{0, lr}};
    o.read("lr_schedule", c.optimizer.lr_schedule);
    o.read("momentum", c.optimizer.momentum);
    o.read("weight_decay", c.optimizer.weight_decay);
    o.read("batch_size", c.optimizer.batch_size);
    o.read("max_epochs", c.optimizer.max_epochs);
    std::string sel = detail::to_string(c.optimizer.selection);
    o.read("selection", sel);
    c.optimizer.selection = detail::parse_selection(sel);
    o.finish();
  }
  {
    StrictObject d = root.child("data");
    d.read("spread", c.data.spread);
    d.read("stddev", c.data.stddev);
    d.read("train_per_class", c.data.train_per_class);
    d.read("val_per_class", c.data.val_per_class);
    d.read("test_per_class", c.data.test_per_class);
    d.read("ring_radius", c.data.ring_radius);
    d.read("ring_noise", c.data.ring_noise);
    d.read("ring_size", c.data.ring_size);
    d.finish();
  }
  {
    StrictObject s = root.child("scorer");
    std::string norm = detail::to_string(c.scorer.norm);
    s.read("norm", norm);
    c.scorer.norm = detail::parse_norm(norm);
    s.read("lambda", c.scorer.lambda);
    s.read("smoothing_sigma", c.scorer.smoothing_sigma);
    s.read("smoothing_samples", c.scorer.smoothing_samples);
    s.read("perturb_x_sigma", c.scorer.perturb_x_sigma);
    s.read("perturb_theta_sigma", c.scorer.perturb_theta_sigma);
    s.read("perturb_samples", c.scorer.perturb_samples);
    s.read("fgsm_bound", c.scorer.fgsm_bound);
    s.read("dropout_rate", c.scorer.dropout_rate);
    s.read("mc_samples", c.scorer.mc_samples);
    std::string agg = detail::to_string(c.scorer.aggregation);
    s.read("aggregation", agg);
    c.scorer.aggregation = detail::parse_aggregation(agg);
    s.finish();
  }
  {
    StrictObject e = root.child("experiment");
    if (e.has("methods")) {
      std::vector<std::string> names;
      e.read("methods", names);
      c.methods.clear();
      for (const auto& n : names) c.methods.push_back(parse_method(n));
    } else {
      e.child("methods");
    }
    e.read("seeds", c.seeds);
    e.read("accuracy_floor", c.accuracy_floor);
    {
      StrictObject cal = e.child("calibration");
      cal.read("stddev", c.calibration_stddev);
      cal.finish();
    }
    {
      StrictObject al = e.child("active_learning");
      al.read("initial", c.active_learning.initial);
      al.read("per_cycle", c.active_learning.per_cycle);
      al.read("cycles", c.active_learning.cycles);
      al.read("acquisition", c.active_learning.acquisition);
      al.read("train_per_class", c.active_learning.train_per_class);
      al.finish();
    }
    {
      StrictObject p = e.child("propositions");
      auto& ps = c.propositions;
      p.read("posterior_n", ps.posterior_n);
      p.read("transfer_models", ps.transfer_models);
      p.read("transfer_dx_scale", ps.transfer_dx_scale);
      p.read("vanishing_train_per_class", ps.vanishing_train_per_class);
      p.read("vanishing_max_epochs", ps.vanishing_max_epochs);
      p.read("vanishing_weight_decay", ps.vanishing_weight_decay);
      p.read("vanishing_loss_floor", ps.vanishing_loss_floor);
      p.read("vanishing_ratio", ps.vanishing_ratio);
      p.read("bound_sigmas", ps.bound_sigmas);
      p.read("bound_trials", ps.bound_trials);
      p.read("bound_inputs", ps.bound_inputs);
      p.finish();
    }
    e.finish();
  }
  root.finish();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

/// Full echo of the effective configuration, defaults included. Parsing the
/// echo yields the same configuration.
inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& s : c.model.conv) conv.push_back({{"filters", s.filters}, {"kernel", s.kernel}});
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(to_string(m));
  const auto& ps = c.propositions;
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
      {"model",
       {{"architecture", to_string(c.model.architecture)},
        {"input_shape", c.model.input_shape},
        {"conv", conv},
        {"hidden", c.model.hidden},
        {"num_classes", c.model.num_classes},
        {"dense_bias", c.model.dense_bias}}},
      {"optimizer",
       {{"lr_schedule", c.optimizer.lr_schedule},
        {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay},
        {"batch_size", c.optimizer.batch_size},
        {"max_epochs", c.optimizer.max_epochs},
        {"selection", detail::to_string(c.optimizer.selection)}}},
      {"data",
       {{"spread", c.data.spread},
        {"stddev", c.data.stddev},
        {"train_per_class", c.data.train_per_class},
        {"val_per_class", c.data.val_per_class},
        {"test_per_class", c.data.test_per_class},
        {"ring_radius", c.data.ring_radius},
        {"ring_noise", c.data.ring_noise},
        {"ring_size", c.data.ring_size}}},
      {"scorer",
       {{"norm", detail::to_string(c.scorer.norm)},
        {"lambda", c.scorer.lambda},
        {"smoothing_sigma", c.scorer.smoothing_sigma},
        {"smoothing_samples", c.scorer.smoothing_samples},
        {"perturb_x_sigma", c.scorer.perturb_x_sigma},
        {"perturb_theta_sigma", c.scorer.perturb_theta_sigma},
        {"perturb_samples", c.scorer.perturb_samples},
        {"fgsm_bound", c.scorer.fgsm_bound},
        {"dropout_rate", c.scorer.dropout_rate},
        {"mc_samples", c.scorer.mc_samples},
        {"aggregation", detail::to_string(c.scorer.aggregation)}}},
      {"experiment",
       {{"methods", methods},
        {"seeds", c.seeds},
        {"accuracy_floor", c.accuracy_floor},
        {"calibration", {{"stddev", c.calibration_stddev}}},
        {"active_learning",
         {{"initial", c.active_learning.initial},
          {"per_cycle", c.active_learning.per_cycle},
          {"cycles", c.active_learning.cycles},
          {"acquisition", c.active_learning.acquisition},
          {"train_per_class", c.active_learning.train_per_class}}},
        {"propositions",
         {{"posterior_n", ps.posterior_n},
          {"transfer_models", ps.transfer_models},
          {"transfer_dx_scale", ps.transfer_dx_scale},
          {"vanishing_train_per_class", ps.vanishing_train_per_class},
          {"vanishing_max_epochs", ps.vanishing_max_epochs},
          {"vanishing_weight_decay", ps.vanishing_weight_decay},
          {"vanishing_loss_floor", ps.vanishing_loss_floor},
          {"vanishing_ratio", ps.vanishing_ratio},
          {"bound_sigmas", ps.bound_sigmas},
          {"bound_trials", ps.bound_trials},
          {"bound_inputs", ps.bound_inputs}}}}}};
}

/// The configuration as embedded in reports: the full echo without the
/// thread count, which never affects results.
inline nlohmann::json report_config_json(const RunConfig& c) {
  nlohmann::json j = run_config_to_json(c);
  j.erase("threads");
  return j;
}

}  // namespace guq
