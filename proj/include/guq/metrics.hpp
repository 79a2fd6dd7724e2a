#pragma once

// Threshold-free evaluation metrics. Scores are "higher = more uncertain";
// for AUROC/AUPR the positive class is the one expected to score higher
// (OOD samples in detection experiments).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "guq/errors.hpp"

namespace guq {

/// P(random positive outscores random negative), ties counted 1/2.
/// Computed from average ranks (Mann-Whitney U).
inline double auroc(std::span<const double> positives,
                    std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw DomainError("auroc: both classes must be non-empty");
  }
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(positives.size() + negatives.size());
  for (double s : positives) items.push_back({s, true});
  for (double s : negatives) items.push_back({s, false});
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.score < b.score; });
  // Rank sums are kept doubled so tied groups stay integral.
  long double doubled_rank_sum = 0.0L;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    // ranks i+1..j, average (i+1+j)/2, doubled: i+1+j
    const long double doubled_avg = static_cast<long double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].positive) doubled_rank_sum += doubled_avg;
    }
    i = j;
  }
  const long double np = static_cast<long double>(positives.size());
  const long double nn = static_cast<long double>(negatives.size());
  const long double u = doubled_rank_sum / 2.0L - np * (np + 1.0L) / 2.0L;
  return static_cast<double>(u / (np * nn));
}

/// Average precision sum_k (R_k - R_{k-1}) P_k over the ranking by
/// descending score. Ties keep input order, positives listed first.
inline double aupr(std::span<const double> positives,
                   std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw DomainError("aupr: both classes must be non-empty");
  }
  std::vector<std::pair<double, bool>> items;
  items.reserve(positives.size() + negatives.size());
  for (double s : positives) items.emplace_back(s, true);
  for (double s : negatives) items.emplace_back(s, false);
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!items[k].second) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(positives.size());
}

struct LiftCurve {
  std::vector<double> quantiles;  // k / n
  std::vector<double> lift;       // acc(first k) / overall acc
  double aulc = 0.0;
  double raulc = 0.0;
};

namespace detail {

/// sum_k correct_k / (k + 1) over the prefixes of `ordered`.
inline long double prefix_accuracy_sum(const std::vector<int>& ordered) {
  long double s = 0.0L;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    correct += ordered[k] ? 1 : 0;
    s += static_cast<long double>(correct) / static_cast<long double>(k + 1);
  }
  return s;
}

}  // namespace detail

/// Lift curve of accuracy among the k least-uncertain predictions,
/// normalized by the curve of the ideal ordering (all correct first).
///
/// With T correct out of n, lift(k) = acc(k) / (T / n) and
/// AULC = (1/n) sum_k lift(k) - 1 = S / T - 1 where S = sum_k acc(k);
/// rAULC = AULC / AULC_ideal = (S - T) / (S_ideal - T).
inline LiftCurve lift_curve(std::span<const int> correct,
                            std::span<const double> uncertainty) {
  const std::size_t n = correct.size();
  if (n != uncertainty.size()) throw DomainError("raulc: length mismatch");
  if (n < 2) throw DomainError("raulc: need at least two samples");
  const std::size_t total = static_cast<std::size_t>(
      std::count_if(correct.begin(), correct.end(), [](int c) { return c != 0; }));
  if (total == 0) throw DomainError("raulc: no correct predictions");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainty[a] < uncertainty[b];
  });
  std::vector<int> by_uncertainty(n), ideal(n, 0);
  for (std::size_t k = 0; k < n; ++k) by_uncertainty[k] = correct[order[k]] != 0;
  std::fill(ideal.begin(), ideal.begin() + static_cast<std::ptrdiff_t>(total), 1);

  const double overall = static_cast<double>(total) / static_cast<double>(n);
  LiftCurve curve;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    hits += by_uncertainty[k] ? 1 : 0;
    curve.quantiles.push_back(static_cast<double>(k + 1) / static_cast<double>(n));
    curve.lift.push_back(static_cast<double>(hits) / static_cast<double>(k + 1) /
                         overall);
  }
  curve.lift.back() = 1.0;
  const long double t = static_cast<long double>(total);
  const long double s = detail::prefix_accuracy_sum(by_uncertainty);
  curve.aulc = static_cast<double>(s / t - 1.0L);
  if (total == n || by_uncertainty == ideal) {
    curve.raulc = 1.0;
    return curve;
  }
  const long double s_ideal = detail::prefix_accuracy_sum(ideal);
  curve.raulc = static_cast<double>((s - t) / (s_ideal - t));
  return curve;
}

inline double raulc(std::span<const int> correct, std::span<const double> uncertainty) {
  return lift_curve(correct, uncertainty).raulc;
}

}  // namespace guq
