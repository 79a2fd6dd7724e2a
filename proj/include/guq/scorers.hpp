#pragma once

// Uncertainty scores for a trained classifier. Gradient scores are built
// from the per-class gradients g_c = d log p(y=c | x) / d theta:
//
//   negrad    || sum_c p_c g_c ||
//   ungrad    (1/C) sum_c || g_c ||
//   gradnorm  || d/dtheta (1/C) sum_c log p_c ||
//   exgrad    sum_c p_c || g_c ||
//   regrad    sum_c sqrt(p_c || g_c ||_2^2)
//   regrad*   regrad over input-smoothed gradients with layer weights
//             exp(lambda * l)
//
// Perturbation scores compare predictions under input, parameter,
// adversarial (FGSM) or dropout perturbations; entropy and vterm read the
// softmax output only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "guq/autodiff.hpp"
#include "guq/errors.hpp"
#include "guq/model.hpp"
#include "guq/random.hpp"
#include "guq/tensor.hpp"

namespace guq {

enum class Method {
  entropy,
  vterm,
  negrad,
  ungrad,
  gradnorm,
  exgrad,
  regrad,
  regrad_star,
  perturb_x,
  perturb_theta,
  mc_aa,
  inserted_dropout,
};

inline constexpr Method kAllMethods[] = {
    Method::entropy,     Method::vterm,         Method::negrad,
    Method::ungrad,      Method::gradnorm,      Method::exgrad,
    Method::regrad,      Method::regrad_star,   Method::perturb_x,
    Method::perturb_theta, Method::mc_aa,       Method::inserted_dropout,
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::entropy: return "entropy";
    case Method::vterm: return "vterm";
    case Method::negrad: return "negrad";
    case Method::ungrad: return "ungrad";
    case Method::gradnorm: return "gradnorm";
    case Method::exgrad: return "exgrad";
    case Method::regrad: return "regrad";
    case Method::regrad_star: return "regrad_star";
    case Method::perturb_x: return "perturb_x";
    case Method::perturb_theta: return "perturb_theta";
    case Method::mc_aa: return "mc_aa";
    case Method::inserted_dropout: return "inserted_dropout";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  for (Method m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown scoring method '" + s + "'");
}

inline bool is_gradient_method(Method m) {
  switch (m) {
    case Method::negrad:
    case Method::ungrad:
    case Method::gradnorm:
    case Method::exgrad:
    case Method::regrad:
    case Method::regrad_star:
      return true;
    default:
      return false;
  }
}

/// How Monte-Carlo prediction ensembles (MC-AA, inserted dropout) are
/// reduced to a score.
enum class EnsembleAggregation {
  mutual_information,  // H(mean p) - mean H(p)
  mean_kl,             // mean KL(p_i || p_clean)
};

struct ScorerConfig {
  Method method = Method::regrad_star;
  NormOrder norm = NormOrder::l2;
  double lambda = 0.0;          // layer weights exp(lambda * l); 0 = flat norm
  double sigma = 0.02;          // Gaussian perturbation std
  std::size_t n_perturb = 100;  // perturbed inputs / parameter draws
  double fgsm_bound = 1e-4;     // MC-AA: epsilon ~ U[-a, a]
  double dropout_rate = 0.4;
  std::size_t mc_samples = 100;
  EnsembleAggregation aggregation = EnsembleAggregation::mutual_information;
  std::uint64_t seed = 0;

  /// Tuned defaults per method.
  static ScorerConfig defaults(Method m) {
    ScorerConfig c;
    c.method = m;
    switch (m) {
      case Method::regrad_star:
        c.lambda = 0.3;
        c.sigma = 0.02;
        c.n_perturb = 100;
        break;
      case Method::perturb_x:
      case Method::perturb_theta:
        c.sigma = 0.008;
        c.n_perturb = 100;
        break;
      default:
        break;
    }
    return c;
  }

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw ConfigError("lambda must be finite and >= 0");
    }
    switch (method) {
      case Method::regrad:
      case Method::regrad_star:
        if (norm != NormOrder::l2) {
          throw ConfigError(to_string(method) + " is defined for the L2 norm only");
        }
        if (method == Method::regrad_star && !(sigma > 0.0)) {
          throw DomainError("smoothing sigma must be positive");
        }
        break;
      case Method::perturb_x:
      case Method::perturb_theta:
        if (!(sigma > 0.0)) throw DomainError("perturbation sigma must be positive");
        if (n_perturb < 1) throw DomainError("need at least one perturbation draw");
        break;
      case Method::mc_aa:
        if (!(fgsm_bound >= 0.0)) throw DomainError("FGSM bound a must be >= 0");
        if (mc_samples < 1) throw DomainError("MC-AA needs at least one sample");
        break;
      case Method::inserted_dropout:
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
          throw DomainError("dropout rate must lie in [0, 1)");
        }
        if (mc_samples < 2) throw DomainError("inserted dropout needs >= 2 samples");
        break;
      default:
        break;
    }
  }
};

struct UncertaintyScore {
  double value = 0.0;
  Method method = Method::entropy;
  std::vector<double> per_layer;  // optional diagnostics, layer l at l-1
};

// ---------------------------------------------------------------------------
// Softmax-only scores and divergences

inline double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

/// KL(p || q) with q clamped below at 1e-12; 0 * log 0 = 0.
inline double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) {
    throw DomainError("kl_divergence: lengths " + std::to_string(p.size()) +
                      " and " + std::to_string(q.size()) + " differ");
  }
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) kl += p[c] * std::log(p[c] / std::max(q[c], 1e-12));
  }
  return std::max(kl, 0.0);
}

inline UncertaintyScore entropy_score(const ProbVector& p) {
  return {entropy(p), Method::entropy, {}};
}

inline UncertaintyScore vterm_score(const ProbVector& p) {
  const double uniform = 1.0 / static_cast<double>(p.size());
  double s = 0.0;
  for (double v : p.values()) s += std::abs(v - uniform);
  return {s, Method::vterm, {}};
}

/// H(mean p) - mean H(p), clamped at 0. Means are taken relative to the
/// first member so that an ensemble of identical predictions scores
/// exactly 0.
inline double ensemble_mutual_information(std::span<const ProbVector> members) {
  if (members.empty()) throw DomainError("empty prediction ensemble");
  const std::size_t m = members.size(), c = members.front().size();
  const ProbVector& first = members.front();
  std::vector<double> mean(c);
  for (std::size_t k = 0; k < c; ++k) {
    double shift = 0.0;
    for (const auto& p : members) shift += p[k] - first[k];
    mean[k] = first[k] + shift / static_cast<double>(m);
  }
  double h_mean = 0.0;
  for (double v : mean) {
    if (v > 0.0) h_mean -= v * std::log(v);
  }
  const double h_first = entropy(first);
  double h_shift = 0.0;
  for (const auto& p : members) h_shift += entropy(p) - h_first;
  const double mean_h = h_first + h_shift / static_cast<double>(m);
  return std::max(h_mean - mean_h, 0.0);
}

inline double ensemble_mean_kl(std::span<const ProbVector> members,
                               const ProbVector& clean) {
  if (members.empty()) throw DomainError("empty prediction ensemble");
  double s = 0.0;
  for (const auto& p : members) s += kl_divergence(p, clean);
  return s / static_cast<double>(members.size());
}

// ---------------------------------------------------------------------------
// Per-class gradients

struct ClassGradients {
  ProbVector probs;                     // p(y | x, theta*) at the clean input
  std::vector<GradientBundle> per_class;  // d log p(y=c | .) / d theta
};

namespace detail {

inline GradientBundle collect_parameter_grads(const ForwardPass& fp,
                                              const LeafGradients& g,
                                              const ParameterSet& params) {
  std::vector<NamedTensor> entries;
  entries.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.entries()[i];
    entries.push_back({p.name, p.layer_index, g.at(fp.parameters[i])});
  }
  return GradientBundle(std::move(entries));
}

/// Gradient of (1/B) sum_rows log p(y=c | row) for each class c over one
/// shared forward pass of `inputs` (row 0 is the clean input).
inline ClassGradients averaged_class_gradients(const Model& model,
                                               std::span<const Tensor> inputs) {
  ForwardPass fp = model.forward(inputs);
  const std::size_t b = fp.batch, classes = fp.classes;
  const double w = 1.0 / static_cast<double>(b);
  ClassGradients out{fp.probs(0), {}};
  out.per_class.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor upstream(Shape{b, classes});
    for (std::size_t r = 0; r < b; ++r) upstream.at(r, c) = w;
    LeafGradients g = fp.tape.backward(fp.log_probs, upstream);
    out.per_class.push_back(collect_parameter_grads(fp, g, model.parameters()));
  }
  return out;
}

}  // namespace detail

/// One forward pass and exactly C backward sweeps.
inline ClassGradients per_class_gradients(const Model& model, const Tensor& x) {
  return detail::averaged_class_gradients(model, std::span<const Tensor>(&x, 1));
}

/// A single draw of perturbation noise.
struct PerturbationDraw {
  enum class Kind { input, parameter, fgsm };
  Kind kind = Kind::input;
  std::vector<Tensor> noise;  // one tensor (input/fgsm) or one per parameter
  std::uint64_t seed = 0;
};

/// N isotropic Gaussian input perturbations drawn from one stream.
inline std::vector<PerturbationDraw> draw_input_noise(const Shape& shape,
                                                      double sigma,
                                                      std::size_t n,
                                                      std::uint64_t seed) {
  if (!(sigma > 0.0)) throw DomainError("perturbation sigma must be positive");
  Rng rng(seed);
  std::vector<PerturbationDraw> draws;
  draws.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(shape);
    for (double& v : t.data()) v = sigma * rng.normal();
    draws.push_back({PerturbationDraw::Kind::input, {std::move(t)}, seed});
  }
  return draws;
}

inline std::vector<Tensor> apply_input_draws(const Tensor& x,
                                             std::span<const PerturbationDraw> draws) {
  std::vector<Tensor> out;
  out.reserve(draws.size());
  for (const auto& d : draws) {
    Tensor xi = x;
    xi += d.noise.at(0);
    out.push_back(std::move(xi));
  }
  return out;
}

/// Mean over {x} and the perturbed copies of the per-class gradients,
/// computed as one backward sweep per class on the mean log-probability.
inline ClassGradients smoothed_per_class_gradients(
    const Model& model, const Tensor& x, std::span<const PerturbationDraw> draws) {
  std::vector<Tensor> inputs{x};
  for (Tensor& xi : apply_input_draws(x, draws)) inputs.push_back(std::move(xi));
  return detail::averaged_class_gradients(model, inputs);
}

inline ClassGradients smoothed_per_class_gradients(const Model& model,
                                                   const Tensor& x, double sigma,
                                                   std::size_t n,
                                                   std::uint64_t seed) {
  if (!(sigma > 0.0)) throw DomainError("smoothing sigma must be positive");
  if (n == 0) return per_class_gradients(model, x);
  const auto draws = draw_input_noise(x.shape(), sigma, n, seed);
  return smoothed_per_class_gradients(model, x, draws);
}

// ---------------------------------------------------------------------------
// Norms

/// sum_l exp(lambda * l) * norm_l, with norms[i] belonging to layer i + 1.
inline double layer_selective_aggregate(std::span<const double> per_layer_norms,
                                        double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  double s = 0.0;
  for (std::size_t i = 0; i < per_layer_norms.size(); ++i) {
    s += std::exp(lambda * static_cast<double>(i + 1)) * per_layer_norms[i];
  }
  return s;
}

/// The norm every gradient score uses: the flat norm when lambda is 0,
/// otherwise the layer-weighted sum of per-layer norms.
inline double gradient_norm(const GradientBundle& g, NormOrder order,
                            double lambda) {
  if (lambda == 0.0) return g.norm(order);
  const auto layers = g.layer_norms(order);
  return layer_selective_aggregate(layers, lambda);
}

namespace detail {

inline std::vector<double> class_norms(const ClassGradients& cg,
                                       const ScorerConfig& cfg) {
  std::vector<double> out;
  out.reserve(cg.per_class.size());
  for (const auto& g : cg.per_class) {
    out.push_back(gradient_norm(g, cfg.norm, cfg.lambda));
  }
  return out;
}

/// sum_c sqrt(p_c * n_c^2)
inline double root_weighted_sum(const ProbVector& p, std::span<const double> norms) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    s += std::sqrt(p[c] * norms[c] * norms[c]);
  }
  return s;
}

inline std::vector<double> regrad_layer_breakdown(const ClassGradients& cg) {
  std::vector<double> per_layer;
  for (std::size_t c = 0; c < cg.per_class.size(); ++c) {
    const auto norms = cg.per_class[c].layer_norms(NormOrder::l2);
    per_layer.resize(norms.size(), 0.0);
    for (std::size_t l = 0; l < norms.size(); ++l) {
      per_layer[l] += std::sqrt(cg.probs[c]) * norms[l];
    }
  }
  return per_layer;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradient scores

inline UncertaintyScore negrad_from(const ClassGradients& cg,
                                    const ScorerConfig& cfg) {
  GradientBundle mix = cg.per_class.front();
  mix.scale(cg.probs[0]);
  for (std::size_t c = 1; c < cg.per_class.size(); ++c) {
    mix.axpy(cg.probs[c], cg.per_class[c]);
  }
  return {gradient_norm(mix, cfg.norm, cfg.lambda), Method::negrad, {}};
}

inline UncertaintyScore ungrad_from(const ClassGradients& cg,
                                    const ScorerConfig& cfg) {
  const auto norms = detail::class_norms(cg, cfg);
  double s = 0.0;
  for (double n : norms) s += n;
  return {s / static_cast<double>(norms.size()), Method::ungrad, {}};
}

inline UncertaintyScore exgrad_from(const ClassGradients& cg,
                                    const ScorerConfig& cfg) {
  const auto norms = detail::class_norms(cg, cfg);
  double s = 0.0;
  for (std::size_t c = 0; c < norms.size(); ++c) s += cg.probs[c] * norms[c];
  return {s, Method::exgrad, {}};
}

inline UncertaintyScore regrad_from(const ClassGradients& cg,
                                    const ScorerConfig& cfg, Method tag) {
  if (cfg.norm != NormOrder::l2) {
    throw ConfigError("regrad is defined for the L2 norm only");
  }
  const auto norms = detail::class_norms(cg, cfg);
  return {detail::root_weighted_sum(cg.probs, norms), tag,
          detail::regrad_layer_breakdown(cg)};
}

inline UncertaintyScore negrad_score(const Model& model, const Tensor& x,
                                     const ScorerConfig& cfg) {
  return negrad_from(per_class_gradients(model, x), cfg);
}

inline UncertaintyScore ungrad_score(const Model& model, const Tensor& x,
                                     const ScorerConfig& cfg) {
  return ungrad_from(per_class_gradients(model, x), cfg);
}

inline UncertaintyScore exgrad_score(const Model& model, const Tensor& x,
                                     const ScorerConfig& cfg) {
  return exgrad_from(per_class_gradients(model, x), cfg);
}

inline UncertaintyScore regrad_score(const Model& model, const Tensor& x,
                                     const ScorerConfig& cfg) {
  return regrad_from(per_class_gradients(model, x), cfg, Method::regrad);
}

/// One backward sweep on the uniformly weighted sum of log-probabilities.
inline UncertaintyScore gradnorm_score(const Model& model, const Tensor& x,
                                       const ScorerConfig& cfg) {
  ForwardPass fp = model.forward(x);
  const std::size_t classes = fp.classes;
  Tensor upstream =
      Tensor::filled(Shape{1, classes}, 1.0 / static_cast<double>(classes));
  LeafGradients g = fp.tape.backward(fp.log_probs, upstream);
  GradientBundle b = detail::collect_parameter_grads(fp, g, model.parameters());
  return {gradient_norm(b, cfg.norm, cfg.lambda), Method::gradnorm, {}};
}

/// REGrad over smoothed gradients with layer-selective norms. Class weights
/// use the clean-input probabilities.
inline UncertaintyScore regrad_star_score(const Model& model, const Tensor& x,
                                          const ScorerConfig& cfg,
                                          std::uint64_t stream = 0) {
  if (!(cfg.sigma > 0.0)) throw DomainError("smoothing sigma must be positive");
  const ClassGradients cg = smoothed_per_class_gradients(
      model, x, cfg.sigma, cfg.n_perturb, derive_seed(cfg.seed, stream));
  return regrad_from(cg, cfg, Method::regrad_star);
}

// ---------------------------------------------------------------------------
// Perturbation scores

/// mean_i KL(p(y | x + dx_i) || p(y | x))
inline double perturb_x_from_draws(const Model& model, const Tensor& x,
                                   std::span<const PerturbationDraw> draws) {
  if (draws.empty()) throw DomainError("perturb_x needs at least one draw");
  const ProbVector clean = model.predict_proba(x);
  const auto inputs = apply_input_draws(x, draws);
  const auto probs = model.predict_batch(inputs);
  return ensemble_mean_kl(probs, clean);
}

inline UncertaintyScore perturb_x_score(const Model& model, const Tensor& x,
                                        const ScorerConfig& cfg,
                                        std::uint64_t stream = 0) {
  if (!(cfg.sigma > 0.0)) throw DomainError("perturbation sigma must be positive");
  const auto draws = draw_input_noise(x.shape(), cfg.sigma, cfg.n_perturb,
                                      derive_seed(cfg.seed, stream));
  return {perturb_x_from_draws(model, x, draws), Method::perturb_x, {}};
}

/// One N(0, sigma^2 I) draw over every parameter tensor.
inline PerturbationDraw draw_parameter_noise(const ParameterSet& params,
                                             double sigma, Rng& rng,
                                             std::uint64_t seed = 0) {
  PerturbationDraw d{PerturbationDraw::Kind::parameter, {}, seed};
  d.noise.reserve(params.size());
  for (const auto& p : params.entries()) {
    Tensor t(p.value.shape());
    for (double& v : t.data()) v = sigma * rng.normal();
    d.noise.push_back(std::move(t));
  }
  return d;
}

/// KL(p(y | x, theta* + dtheta) || p(y | x, theta*)) for one draw. The
/// model's own parameters are never modified.
inline double parameter_perturbation_kl(const Model& model, const Tensor& x,
                                        const ProbVector& clean,
                                        const PerturbationDraw& draw) {
  ParameterSet perturbed = model.parameters();
  if (draw.noise.size() != perturbed.size()) {
    throw ShapeError("parameter noise does not match the model layout");
  }
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += draw.noise[i];
  return kl_divergence(model.predict_proba(x, &perturbed), clean);
}

inline double perturb_theta_from_draws(const Model& model, const Tensor& x,
                                       std::span<const PerturbationDraw> draws) {
  if (draws.empty()) throw DomainError("perturb_theta needs at least one draw");
  const ProbVector clean = model.predict_proba(x);
  double s = 0.0;
  for (const auto& d : draws) s += parameter_perturbation_kl(model, x, clean, d);
  return s / static_cast<double>(draws.size());
}

inline UncertaintyScore perturb_theta_score(const Model& model, const Tensor& x,
                                            const ScorerConfig& cfg,
                                            std::uint64_t stream = 0) {
  if (!(cfg.sigma > 0.0)) throw DomainError("perturbation sigma must be positive");
  if (cfg.n_perturb < 1) throw DomainError("need at least one perturbation draw");
  const std::uint64_t seed = derive_seed(cfg.seed, stream);
  Rng rng(seed);
  const ProbVector clean = model.predict_proba(x);
  double s = 0.0;
  for (std::size_t i = 0; i < cfg.n_perturb; ++i) {
    s += parameter_perturbation_kl(
        model, x, clean, draw_parameter_noise(model.parameters(), cfg.sigma, rng, seed));
  }
  return {s / static_cast<double>(cfg.n_perturb), Method::perturb_theta, {}};
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// sign of the input gradient of the NLL at the predicted class; sign(0)=0.
inline Tensor fgsm_direction(const Model& model, const Tensor& x) {
  ForwardOptions o;
  o.parameter_grads = false;
  o.input_grads = true;
  ForwardPass fp = model.forward(x, o);
  const std::size_t pred = fp.probs(0).argmax();
  Tensor upstream(Shape{1, fp.classes});
  upstream.at(0, pred) = -1.0;
  Tensor g = fp.tape.backward(fp.log_probs, upstream).at(fp.inputs[0]);
  for (double& v : g.data()) v = sign_of(v);
  return g;
}

inline UncertaintyScore mc_aa_score(const Model& model, const Tensor& x,
                                    const ScorerConfig& cfg,
                                    std::uint64_t stream = 0) {
  if (!(cfg.fgsm_bound >= 0.0)) throw DomainError("FGSM bound a must be >= 0");
  if (cfg.mc_samples < 1) throw DomainError("MC-AA needs at least one sample");
  const Tensor direction = fgsm_direction(model, x);
  Rng rng(derive_seed(cfg.seed, stream));
  std::vector<Tensor> inputs;
  inputs.reserve(cfg.mc_samples);
  for (std::size_t i = 0; i < cfg.mc_samples; ++i) {
    const double eps = rng.uniform(-cfg.fgsm_bound, cfg.fgsm_bound);
    Tensor xi = x;
    xi.axpy(eps, direction);
    inputs.push_back(std::move(xi));
  }
  const auto probs = model.predict_batch(inputs);
  const double v = cfg.aggregation == EnsembleAggregation::mutual_information
                       ? ensemble_mutual_information(probs)
                       : ensemble_mean_kl(probs, model.predict_proba(x));
  return {v, Method::mc_aa, {}};
}

inline UncertaintyScore inserted_dropout_score(const DropoutModel& dropout,
                                               const Tensor& x,
                                               const ScorerConfig& cfg,
                                               std::uint64_t stream = 0) {
  if (cfg.mc_samples < 2) throw DomainError("inserted dropout needs >= 2 samples");
  Rng rng(derive_seed(cfg.seed, stream));
  std::vector<ProbVector> probs;
  probs.reserve(cfg.mc_samples);
  for (std::size_t i = 0; i < cfg.mc_samples; ++i) {
    probs.push_back(dropout.predict_proba(x, rng));
  }
  const double v =
      cfg.aggregation == EnsembleAggregation::mutual_information
          ? ensemble_mutual_information(probs)
          : ensemble_mean_kl(probs, dropout.base().predict_proba(x));
  return {v, Method::inserted_dropout, {}};
}

// ---------------------------------------------------------------------------

/// Scores one input. `stream` identifies the sample so that stochastic
/// scores draw from an independent, order-free random stream.
inline UncertaintyScore score(const Model& model, const Tensor& x,
                              const ScorerConfig& cfg, std::uint64_t stream = 0) {
  cfg.validate();
  switch (cfg.method) {
    case Method::entropy: return entropy_score(model.predict_proba(x));
    case Method::vterm: return vterm_score(model.predict_proba(x));
    case Method::negrad: return negrad_score(model, x, cfg);
    case Method::ungrad: return ungrad_score(model, x, cfg);
    case Method::gradnorm: return gradnorm_score(model, x, cfg);
    case Method::exgrad: return exgrad_score(model, x, cfg);
    case Method::regrad: return regrad_score(model, x, cfg);
    case Method::regrad_star: return regrad_star_score(model, x, cfg, stream);
    case Method::perturb_x: return perturb_x_score(model, x, cfg, stream);
    case Method::perturb_theta: return perturb_theta_score(model, x, cfg, stream);
    case Method::mc_aa: return mc_aa_score(model, x, cfg, stream);
    case Method::inserted_dropout:
      return inserted_dropout_score(insert_dropout(model, cfg.dropout_rate), x, cfg,
                                    stream);
  }
  throw ConfigError("unhandled scoring method");
}

}  // namespace guq
