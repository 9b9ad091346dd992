#pragma once

// Group confusion rates and the fairness / utility metrics built on them.
// Groups are binary (0/1). A rate with an empty denominator is std::nullopt,
// never 0, so a shard missing a cell cannot pass as fair.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glf/error.hpp"

namespace glf {

struct RateCell {
  std::size_t count = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t predicted_positive = 0;

  std::optional<double> tpr, fnr, fpr, tnr, positive_rate;

  std::size_t false_negatives() const { return positives - true_positives; }
  std::size_t true_negatives() const { return negatives - false_positives; }

  void finalize() {
    auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
      if (b == 0) return std::nullopt;
      return static_cast<double>(a) / static_cast<double>(b);
    };
    tpr = ratio(true_positives, positives);
    fnr = ratio(false_negatives(), positives);
    fpr = ratio(false_positives, negatives);
    tnr = ratio(true_negatives(), negatives);
    positive_rate = ratio(predicted_positive, count);
  }
};

struct GroupRates {
  std::array<RateCell, 2> group;
  RateCell overall;
};

namespace detail {

inline void check_binary(std::span<const int> v, const char* what) {
  for (int x : v)
    if (x != 0 && x != 1) throw DomainError(std::string(what) + ": entries must be 0 or 1");
}

}  // namespace detail

inline GroupRates group_rates(std::span<const int> predictions, std::span<const int> labels,
                              std::span<const int> groups) {
  if (predictions.size() != labels.size() || groups.size() != labels.size())
    throw ShapeError("group_rates: predictions, labels and groups must have equal length");
  detail::check_binary(predictions, "group_rates predictions");
  detail::check_binary(labels, "group_rates labels");
  detail::check_binary(groups, "group_rates groups");
  GroupRates r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (RateCell* c : {&r.group[groups[i]], &r.overall}) {
      ++c->count;
      c->predicted_positive += predictions[i];
      if (labels[i]) {
        ++c->positives;
        c->true_positives += predictions[i];
      } else {
        ++c->negatives;
        c->false_positives += predictions[i];
      }
    }
  }
  for (auto& g : r.group) g.finalize();
  r.overall.finalize();
  return r;
}

namespace detail {

inline std::array<double, 2> positive_rates(std::span<const int> predictions, std::span<const int> groups,
                                            const char* who) {
  if (predictions.size() != groups.size()) throw ShapeError(std::string(who) + ": length mismatch");
  std::array<std::size_t, 2> n{}, pos{};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != 0 && groups[i] != 1) throw DomainError(std::string(who) + ": groups must be 0 or 1");
    ++n[groups[i]];
    pos[groups[i]] += predictions[i] ? 1 : 0;
  }
  if (n[0] == 0 || n[1] == 0) throw UndefinedMetricError(std::string(who) + ": a group is empty");
  return {double(pos[0]) / double(n[0]), double(pos[1]) / double(n[1])};
}

}  // namespace detail

// |Pr(Yhat=1 | G=1) - Pr(Yhat=1 | G=0)|
inline double dpd(std::span<const int> predictions, std::span<const int> groups) {
  auto r = detail::positive_rates(predictions, groups, "dpd");
  return std::abs(r[1] - r[0]);
}

// Equalized-odds difference: the larger of the TPR gap and the FPR gap.
inline double eod(std::span<const int> predictions, std::span<const int> labels, std::span<const int> groups) {
  auto r = group_rates(predictions, labels, groups);
  for (const auto& g : r.group)
    if (!g.tpr || !g.fpr) throw UndefinedMetricError("eod: a (group, label) cell is empty");
  return std::max(std::abs(*r.group[0].tpr - *r.group[1].tpr), std::abs(*r.group[0].fpr - *r.group[1].fpr));
}

// max_g |Pr(Yhat=1 | G=g) - Pr(Yhat=1)|; a population with one group scores 0.
inline double dp_dis(std::span<const int> predictions, std::span<const int> groups) {
  if (predictions.size() != groups.size()) throw ShapeError("dp_dis: length mismatch");
  if (predictions.empty()) throw UndefinedMetricError("dp_dis: empty population");
  std::array<std::size_t, 2> n{}, pos{};
  std::size_t total_pos = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != 0 && groups[i] != 1) throw DomainError("dp_dis: groups must be 0 or 1");
    ++n[groups[i]];
    pos[groups[i]] += predictions[i] ? 1 : 0;
    total_pos += predictions[i] ? 1 : 0;
  }
  const double overall = double(total_pos) / double(predictions.size());
  double worst = 0.0;
  for (int g = 0; g < 2; ++g)
    if (n[g] > 0) worst = std::max(worst, std::abs(double(pos[g]) / double(n[g]) - overall));
  return worst;
}

struct EqualityDifferences {
  double fned = 0.0;      // Sum_g |FNR_g - FNR_overall|
  double fped = 0.0;      // Sum_g |FPR_g - FPR_overall|
  double fned_max = 0.0;  // max-deviation variant, diagnostics only
  double fped_max = 0.0;
  int skipped = 0;        // group rates left out because they were undefined
};

inline EqualityDifferences fned_fped(const GroupRates& r) {
  EqualityDifferences d;
  for (const auto& g : r.group) {
    if (g.fnr && r.overall.fnr) {
      const double dev = std::abs(*g.fnr - *r.overall.fnr);
      d.fned += dev;
      d.fned_max = std::max(d.fned_max, dev);
    } else if (g.count > 0) {
      ++d.skipped;
    }
    if (g.fpr && r.overall.fpr) {
      const double dev = std::abs(*g.fpr - *r.overall.fpr);
      d.fped += dev;
      d.fped_max = std::max(d.fped_max, dev);
    } else if (g.count > 0) {
      ++d.skipped;
    }
  }
  return d;
}

inline double utility(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("utility: length mismatch");
  if (labels.empty()) throw UndefinedMetricError("utility: empty population");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
  return double(correct) / double(labels.size());
}

// Spread of per-client accuracies (max - min).
inline double discrepancy(std::span<const double> accuracies) {
  if (accuracies.empty()) throw DomainError("discrepancy: no clients");
  auto [lo, hi] = std::minmax_element(accuracies.begin(), accuracies.end());
  return *hi - *lo;
}

struct PrecisionRecall {
  std::optional<double> precision;
  std::optional<double> recall;
};

inline PrecisionRecall precision_recall(std::span<const int> predictions, std::span<const int> labels) {
  auto r = group_rates(predictions, labels, std::vector<int>(labels.size(), 0));
  PrecisionRecall pr;
  if (r.overall.predicted_positive > 0)
    pr.precision = double(r.overall.true_positives) / double(r.overall.predicted_positive);
  pr.recall = r.overall.tpr;
  return pr;
}

}  // namespace glf
