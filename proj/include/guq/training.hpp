#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "guq/dataset.hpp"
#include "guq/errors.hpp"
#include "guq/model.hpp"
#include "guq/random.hpp"

namespace guq {

enum class ModelSelection {
  best_validation,  // highest validation accuracy, earliest epoch on ties
  last_epoch,
};

struct OptimizerConfig {
  /// (first epoch, learning rate) pairs; the latest entry not after the
  /// current epoch applies. Epochs count from 0.
  std::vector<std::pair<std::size_t, double>> lr_schedule{{0, 1e-2}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  ModelSelection selection = ModelSelection::best_validation;

  void validate() const {
    if (lr_schedule.empty()) throw ConfigError("learning-rate schedule is empty");
    for (const auto& [epoch, lr] : lr_schedule) {
      if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  }

  double learning_rate(std::size_t epoch) const {
    double lr = lr_schedule.front().second;
    for (const auto& [start, value] : lr_schedule) {
      if (start <= epoch) lr = value;
    }
    return lr;
  }
};

struct MomentumState {
  std::vector<Tensor> velocity;
};

/// Classic momentum SGD with L2 weight decay folded into the gradient:
///   v <- mu * v + g + wd * theta;  theta <- theta - lr * v
inline void sgd_step(ParameterSet& params, const GradientBundle& grads,
                     MomentumState& state, const OptimizerConfig& config,
                     double lr) {
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) +
                     " gradients for " + std::to_string(params.size()) +
                     " parameters");
  }
  if (state.velocity.empty()) {
    for (const auto& p : params.entries()) state.velocity.emplace_back(p.value.shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i];
    const Tensor& g = grads[i];
    Tensor& v = state.velocity[i];
    theta.require_same_shape(g, "sgd_step");
    theta.require_same_shape(v, "sgd_step");
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = config.momentum * v[k] + g[k] + config.weight_decay * theta[k];
      theta[k] -= lr * v[k];
    }
  }
}

struct LossAndGradient {
  double loss = 0.0;
  GradientBundle gradient;
};

/// Mean negative log-likelihood of a batch and its parameter gradient.
inline LossAndGradient nll_gradient(const Model& model,
                                    std::span<const Tensor> inputs,
                                    std::span<const int> labels) {
  ForwardPass fp = model.forward(inputs);
  const std::size_t b = inputs.size(), c = model.num_classes();
  Tensor weights(Shape{b, c});
  for (std::size_t r = 0; r < b; ++r) {
    weights.at(r, static_cast<std::size_t>(labels[r])) = -1.0 / static_cast<double>(b);
  }
  NodeId loss = ops::weighted_sum(fp.tape, fp.log_probs, std::move(weights));
  LeafGradients g = fp.tape.backward(loss);
  std::vector<NamedTensor> entries;
  const auto& params = model.parameters().entries();
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries.push_back({params[i].name, params[i].layer_index, g.at(fp.parameters[i])});
  }
  return {fp.tape.value(loss).item(), GradientBundle(std::move(entries))};
}

struct Evaluation {
  double accuracy = 0.0;
  double nll = 0.0;
};

/// Accuracy (argmax, lowest class on ties) and mean NLL of the true label.
inline Evaluation evaluate(const Model& model, const Dataset& data,
                           std::size_t chunk = 256) {
  if (data.empty()) throw DomainError("evaluate: empty dataset");
  data.require_labels(model.num_classes());
  std::size_t correct = 0;
  double nll = 0.0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.size() - start);
    auto probs = model.predict_batch(
        std::span<const Tensor>(data.inputs).subspan(start, n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(data.labels[start + i]);
      if (probs[i].argmax() == y) ++correct;
      nll -= std::log(std::max(probs[i][y], std::numeric_limits<double>::min()));
    }
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, nll / n};
}

/// Called after every epoch with the current (not the selected) model.
using EpochCallback = std::function<void(std::size_t epoch, const Model&)>;

struct TrainReport {
  std::vector<double> train_loss;      // mean batch loss per epoch
  std::vector<double> val_accuracy;    // per epoch
  std::size_t selected_epoch = 0;      // 0-based
  Model model;
};

/// Minibatch momentum SGD on mean NLL. Shuffling draws from a stream
/// seeded by `opt.seed` only, so a fixed seed gives identical reports.
inline TrainReport fit(const ModelConfig& config, const OptimizerConfig& opt,
                       const Dataset& train, const Dataset& val,
                       const EpochCallback& on_epoch = {}) {
  opt.validate();
  if (train.empty()) throw DomainError("fit: empty training set");
  train.require_labels(config.num_classes);
  if (!val.empty()) val.require_labels(config.num_classes);
  {
    std::vector<bool> present(config.num_classes, false);
    std::size_t distinct = 0;
    for (int y : train.labels) {
      if (!present[y]) {
        present[y] = true;
        ++distinct;
      }
    }
    if (distinct < 2) throw DomainError("fit: training set holds a single class");
  }
  if (opt.selection == ModelSelection::best_validation && val.empty()) {
    throw DomainError("fit: validation-based selection needs validation data");
  }

  Rng rng(derive_seed(opt.seed, 0x7261696eULL));
  Model model = Model::initialized(config, derive_seed(opt.seed, 0x696e6974ULL));
  MomentumState state;
  TrainReport report{{}, {}, 0, model};
  double best_acc = -1.0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> batch_x;
  std::vector<int> batch_y;
  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = opt.learning_rate(epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t n = std::min(opt.batch_size, order.size() - start);
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = start; i < start + n; ++i) {
        batch_x.push_back(train.inputs[order[i]]);
        batch_y.push_back(train.labels[order[i]]);
      }
      LossAndGradient lg = nll_gradient(model, batch_x, batch_y);
      loss_sum += lg.loss * static_cast<double>(n);
      sgd_step(model.mutable_parameters(), lg.gradient, state, opt, lr);
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
    const double acc = val.empty() ? 0.0 : evaluate(model, val).accuracy;
    report.val_accuracy.push_back(acc);
    if (on_epoch) on_epoch(epoch, model);
    if (opt.selection == ModelSelection::best_validation && acc > best_acc) {
      best_acc = acc;
      report.selected_epoch = epoch;
      report.model = model;
    }
  }
  if (opt.selection == ModelSelection::last_epoch) {
    report.selected_epoch = opt.max_epochs - 1;
    report.model = model;
  }
  return report;
}

}  // namespace guq
