#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "guq/autodiff.hpp"
#include "guq/errors.hpp"
#include "guq/random.hpp"
#include "guq/tensor.hpp"

namespace guq {

enum class Architecture { mlp, small_cnn };

inline std::string to_string(Architecture a) {
  return a == Architecture::mlp ? "mlp" : "small_cnn";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "mlp") return Architecture::mlp;
  if (s == "small_cnn") return Architecture::small_cnn;
  throw ConfigError("unknown architecture '" + s + "'");
}

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// mlp:       Dense-ReLU-...-Dense
/// small_cnn: (Conv2D-ReLU)* - MaxPool2D - Dense-ReLU-...-Dense
struct ModelConfig {
  Architecture architecture = Architecture::mlp;
  Shape input_shape{2};
  std::vector<ConvSpec> conv;
  std::vector<std::size_t> hidden;
  std::size_t num_classes = 2;
  bool dense_bias = true;  // conv layers always carry a bias

  static ModelConfig mlp(std::size_t inputs, std::vector<std::size_t> hidden,
                         std::size_t classes) {
    ModelConfig c;
    c.architecture = Architecture::mlp;
    c.input_shape = {inputs};
    c.hidden = std::move(hidden);
    c.num_classes = classes;
    return c;
  }

  static ModelConfig small_cnn(Shape input_shape, std::vector<ConvSpec> conv,
                               std::vector<std::size_t> hidden,
                               std::size_t classes) {
    ModelConfig c;
    c.architecture = Architecture::small_cnn;
    c.input_shape = std::move(input_shape);
    c.conv = std::move(conv);
    c.hidden = std::move(hidden);
    c.num_classes = classes;
    return c;
  }

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (input_shape.empty() || shape_size(input_shape) == 0) {
      throw ConfigError("input_shape must be non-empty and positive");
    }
    for (std::size_t d : input_shape) {
      if (d == 0) throw ConfigError("input_shape dimensions must be positive");
    }
    for (std::size_t w : hidden) {
      if (w == 0) throw ConfigError("hidden widths must be positive");
    }
    if (architecture == Architecture::mlp) {
      if (!conv.empty()) throw ConfigError("mlp does not take conv layers");
      return;
    }
    if (input_shape.size() != 3) {
      throw ConfigError("small_cnn input_shape must be [c, h, w]");
    }
    if (conv.empty()) throw ConfigError("small_cnn needs at least one conv layer");
    std::size_t h = input_shape[1], w = input_shape[2];
    for (const ConvSpec& c : conv) {
      if (c.filters == 0 || c.kernel == 0) {
        throw ConfigError("conv filters and kernel must be positive");
      }
      if (c.kernel > h || c.kernel > w) {
        throw ConfigError("conv kernel larger than its input");
      }
      h = h - c.kernel + 1;
      w = w - c.kernel + 1;
    }
    if (h < 2 || w < 2) throw ConfigError("feature map too small for max-pool");
  }

  /// Width of the flattened features entering the first dense layer.
  std::size_t dense_input_width() const {
    if (architecture == Architecture::mlp) return shape_size(input_shape);
    std::size_t h = input_shape[1], w = input_shape[2];
    for (const ConvSpec& c : conv) {
      h = h - c.kernel + 1;
      w = w - c.kernel + 1;
    }
    return conv.back().filters * (h / 2) * (w / 2);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  std::size_t layer_index = 0;  // 1-based, parameterized layers only
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered parameter tensors of a classifier, each tagged with the index of
/// the (conv or dense) layer it belongs to.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<NamedTensor> entries)
      : entries_(std::move(entries)) {}

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Tensor& operator[](std::size_t i) const { return entries_[i].value; }
  Tensor& operator[](std::size_t i) { return entries_[i].value; }

  std::size_t layer_count() const {
    std::size_t l = 0;
    for (const auto& e : entries_) l = std::max(l, e.layer_index);
    return l;
  }

  std::size_t parameter_count() const {
    std::size_t d = 0;
    for (const auto& e : entries_) d += e.value.size();
    return d;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

enum class NormOrder { l1, l2 };

/// Gradient tensors laid out exactly like a ParameterSet.
class GradientBundle {
 public:
  GradientBundle() = default;
  explicit GradientBundle(std::vector<NamedTensor> entries)
      : entries_(std::move(entries)) {}

  static GradientBundle zeros_like(const ParameterSet& params) {
    std::vector<NamedTensor> e;
    e.reserve(params.size());
    for (const auto& p : params.entries()) {
      e.push_back({p.name, p.layer_index, Tensor(p.value.shape())});
    }
    return GradientBundle(std::move(e));
  }

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Tensor& operator[](std::size_t i) const { return entries_[i].value; }
  Tensor& operator[](std::size_t i) { return entries_[i].value; }

  std::size_t layer_count() const {
    std::size_t l = 0;
    for (const auto& e : entries_) l = std::max(l, e.layer_index);
    return l;
  }

  GradientBundle& axpy(double alpha, const GradientBundle& other) {
    require_compatible(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      entries_[i].value.axpy(alpha, other.entries_[i].value);
    }
    return *this;
  }

  GradientBundle& scale(double alpha) {
    for (auto& e : entries_) e.value.scale(alpha);
    return *this;
  }

  /// Norm over all parameters taken as one flat vector.
  double norm(NormOrder order) const {
    double s = 0.0;
    for (const auto& e : entries_) {
      s += order == NormOrder::l2 ? e.value.squared_norm() : e.value.abs_sum();
    }
    return order == NormOrder::l2 ? std::sqrt(s) : s;
  }

  /// Norm of each layer's parameters; element l-1 belongs to layer l.
  std::vector<double> layer_norms(NormOrder order) const {
    std::vector<double> acc(layer_count(), 0.0);
    for (const auto& e : entries_) {
      acc[e.layer_index - 1] +=
          order == NormOrder::l2 ? e.value.squared_norm() : e.value.abs_sum();
    }
    if (order == NormOrder::l2) {
      for (double& v : acc) v = std::sqrt(v);
    }
    return acc;
  }

  friend bool operator==(const GradientBundle&, const GradientBundle&) = default;

 private:
  void require_compatible(const GradientBundle& other) const {
    if (other.entries_.size() != entries_.size()) {
      throw ShapeError("gradient bundles differ in entry count");
    }
  }

  std::vector<NamedTensor> entries_;
};

/// Softmax output p(y | x, theta) over C classes.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
    double s = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw DomainError("probabilities must be finite and non-negative");
      }
      s += p;
    }
    if (probs_.size() < 2 || std::abs(s - 1.0) > 1e-9) {
      throw DomainError("probability vector must have >= 2 entries summing to 1");
    }
  }

  static ProbVector from_log_probs(std::span<const double> log_probs) {
    std::vector<double> p(log_probs.size());
    std::transform(log_probs.begin(), log_probs.end(), p.begin(),
                   [](double v) { return std::exp(v); });
    return ProbVector(std::move(p));
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t c) const { return probs_[c]; }
  const std::vector<double>& values() const { return probs_; }

  /// Most probable class, lowest index on ties.
  std::size_t argmax() const {
    return static_cast<std::size_t>(
        std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

 private:
  std::vector<double> probs_;
};

/// Dropout masking applied to the input of the final dense layer.
struct DropoutMasking {
  double rate = 0.0;
  Rng* rng = nullptr;
};

struct ForwardOptions {
  bool parameter_grads = true;
  bool input_grads = false;
  std::optional<DropoutMasking> dropout;
  /// Optional replacement parameters (same layout), e.g. perturbed copies.
  const ParameterSet* parameters = nullptr;
};

/// A forward pass and the tape needed for any later backward sweep.
struct ForwardPass {
  Tape tape;
  std::vector<NodeId> inputs;      // one leaf per sample
  std::vector<NodeId> parameters;  // aligned with ParameterSet entries
  NodeId logits = 0;               // [B x C]
  NodeId log_probs = 0;            // [B x C]
  std::size_t batch = 0;
  std::size_t classes = 0;

  ProbVector probs(std::size_t row = 0) const {
    return ProbVector::from_log_probs(
        tape.value(log_probs).data().subspan(row * classes, classes));
  }
};

struct LayoutEntry {
  std::string name;
  std::size_t layer_index = 0;
  Shape shape;
  std::size_t fan_in = 0;
  bool is_bias = false;
};

/// Names, layer indices and shapes of every parameter tensor, in forward
/// order. Layer indices count conv and dense layers only, starting at 1.
inline std::vector<LayoutEntry> parameter_layout(const ModelConfig& config) {
  config.validate();
  std::vector<LayoutEntry> out;
  std::size_t layer = 0;
  if (config.architecture == Architecture::small_cnn) {
    std::size_t channels = config.input_shape[0];
    for (std::size_t i = 0; i < config.conv.size(); ++i) {
      const ConvSpec& c = config.conv[i];
      ++layer;
      const std::string name = "conv" + std::to_string(i + 1);
      const std::size_t fan_in = channels * c.kernel * c.kernel;
      out.push_back({name + ".weight", layer,
                     {c.filters, channels, c.kernel, c.kernel}, fan_in, false});
      out.push_back({name + ".bias", layer, {c.filters}, fan_in, true});
      channels = c.filters;
    }
  }
  std::size_t width = config.dense_input_width();
  std::vector<std::size_t> widths = config.hidden;
  widths.push_back(config.num_classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ++layer;
    const std::string name = "dense" + std::to_string(i + 1);
    out.push_back({name + ".weight", layer, {width, widths[i]}, width, false});
    if (config.dense_bias) {
      out.push_back({name + ".bias", layer, {widths[i]}, width, true});
    }
    width = widths[i];
  }
  return out;
}

/// He-scaled normal weights (variance 2 / fan_in) and zero biases.
inline ParameterSet init_parameters(const ModelConfig& config,
                                    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedTensor> entries;
  for (const LayoutEntry& e : parameter_layout(config)) {
    Tensor t(e.shape);
    if (!e.is_bias) {
      const double sd = std::sqrt(2.0 / static_cast<double>(e.fan_in));
      for (double& v : t.data()) v = rng.normal(0.0, sd);
    }
    entries.push_back({e.name, e.layer_index, std::move(t)});
  }
  return ParameterSet(std::move(entries));
}

class Model {
 public:
  Model(ModelConfig config, ParameterSet params)
      : config_(std::move(config)),
        layout_(parameter_layout(config_)),
        params_(std::move(params)) {
    check_layout(params_);
  }

  static Model initialized(const ModelConfig& config, std::uint64_t seed) {
    return Model(config, init_parameters(config, seed));
  }

  const ModelConfig& config() const { return config_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& mutable_parameters() { return params_; }
  std::size_t num_classes() const { return config_.num_classes; }

  ForwardPass forward(std::span<const Tensor> inputs,
                      const ForwardOptions& opts = {}) const {
    if (inputs.empty()) throw ShapeError("forward: empty batch");
    const ParameterSet& params = opts.parameters ? *opts.parameters : params_;
    if (opts.parameters) check_layout(params);

    ForwardPass fp;
    Tape& t = fp.tape;
    fp.batch = inputs.size();
    fp.classes = config_.num_classes;
    for (const Tensor& x : inputs) {
      if (x.shape() != config_.input_shape) {
        throw ShapeError("input shape " + shape_string(x.shape()) +
                         " does not match model input " +
                         shape_string(config_.input_shape));
      }
      fp.inputs.push_back(opts.input_grads ? t.leaf(x) : t.constant(x));
    }
    for (const auto& p : params.entries()) {
      fp.parameters.push_back(opts.parameter_grads ? t.leaf(p.value)
                                                   : t.constant(p.value));
    }

    std::size_t next = 0;
    std::vector<NodeId> features;
    if (config_.architecture == Architecture::small_cnn) {
      const std::size_t convs = config_.conv.size();
      for (NodeId x : fp.inputs) {
        NodeId h = x;
        for (std::size_t i = 0; i < convs; ++i) {
          h = ops::relu(t, ops::conv2d(t, h, fp.parameters[2 * i],
                                       fp.parameters[2 * i + 1]));
        }
        h = ops::maxpool2d(t, h);
        features.push_back(ops::reshape(t, h, {t.value(h).size()}));
      }
      next = 2 * convs;
    } else {
      features = fp.inputs;
    }

    NodeId h = ops::stack_rows(t, features);
    const std::size_t dense_layers = config_.hidden.size() + 1;
    for (std::size_t i = 0; i < dense_layers; ++i) {
      const bool last = i + 1 == dense_layers;
      if (last && opts.dropout) h = apply_dropout(t, h, *opts.dropout);
      h = ops::matmul(t, h, fp.parameters[next++]);
      if (config_.dense_bias) h = ops::add_bias(t, h, fp.parameters[next++]);
      if (!last) h = ops::relu(t, h);
    }
    fp.logits = h;
    fp.log_probs = ops::log_softmax(t, h);
    return fp;
  }

  ForwardPass forward(const Tensor& x, const ForwardOptions& opts = {}) const {
    return forward(std::span<const Tensor>(&x, 1), opts);
  }

  Tensor logits(const Tensor& x) const {
    ForwardOptions o;
    o.parameter_grads = false;
    ForwardPass fp = forward(x, o);
    return fp.tape.value(fp.logits).reshaped({config_.num_classes});
  }

  ProbVector predict_proba(const Tensor& x,
                           const ParameterSet* params = nullptr) const {
    ForwardOptions o;
    o.parameter_grads = false;
    o.parameters = params;
    return forward(x, o).probs();
  }

  std::vector<ProbVector> predict_batch(std::span<const Tensor> xs,
                                        const ForwardOptions& base = {}) const {
    ForwardOptions o = base;
    o.parameter_grads = false;
    o.input_grads = false;
    ForwardPass fp = forward(xs, o);
    std::vector<ProbVector> out;
    out.reserve(xs.size());
    for (std::size_t r = 0; r < xs.size(); ++r) out.push_back(fp.probs(r));
    return out;
  }

 private:
  static NodeId apply_dropout(Tape& t, NodeId h, const DropoutMasking& d) {
    if (!(d.rate >= 0.0 && d.rate < 1.0)) {
      throw DomainError("dropout rate must lie in [0, 1)");
    }
    if (!d.rng) throw DomainError("dropout requires a random stream");
    const double keep = 1.0 - d.rate;
    Tensor mask(t.value(h).shape());
    for (double& m : mask.data()) m = d.rng->uniform() < keep ? 1.0 / keep : 0.0;
    return ops::mul_constant(t, h, std::move(mask));
  }

  void check_layout(const ParameterSet& params) const {
    if (params.size() != layout_.size()) {
      throw ShapeError("parameter set has " + std::to_string(params.size()) +
                       " tensors, model expects " +
                       std::to_string(layout_.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& got = params.entries()[i];
      const auto& want = layout_[i];
      if (got.value.shape() != want.shape ||
          got.layer_index != want.layer_index) {
        throw ShapeError("parameter '" + got.name + "' has shape " +
                         shape_string(got.value.shape()) + " at layer " +
                         std::to_string(got.layer_index) + ", expected " +
                         shape_string(want.shape) + " at layer " +
                         std::to_string(want.layer_index));
      }
    }
  }

  ModelConfig config_;
  std::vector<LayoutEntry> layout_;
  ParameterSet params_;
};

/// A model with an extra dropout layer in front of its final dense layer.
/// Masks use inverted scaling, so the expected activation is unchanged.
class DropoutModel {
 public:
  DropoutModel(const Model& base, double rate) : base_(&base), rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw DomainError("dropout rate must lie in [0, 1), got " +
                        std::to_string(rate));
    }
  }

  const Model& base() const { return *base_; }
  double rate() const { return rate_; }

  ForwardPass forward(std::span<const Tensor> xs, Rng& rng,
                      ForwardOptions opts = {}) const {
    opts.dropout = DropoutMasking{rate_, &rng};
    return base_->forward(xs, opts);
  }

  ProbVector predict_proba(const Tensor& x, Rng& rng) const {
    ForwardOptions o;
    o.parameter_grads = false;
    return forward(std::span<const Tensor>(&x, 1), rng, o).probs();
  }

 private:
  const Model* base_;
  double rate_;
};

inline DropoutModel insert_dropout(const Model& model, double rate) {
  return DropoutModel(model, rate);
}

}  // namespace guq
