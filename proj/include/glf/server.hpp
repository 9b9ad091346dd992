#pragma once

// Server side: Gini coefficients of client models, exact 1-D k-means over
// those coefficients, and the fairness-aware aggregation.
//
// Aggregation weights a cluster i by D_i * exp(-gamma * mean Gini_i), normalised
// over clusters, and takes the data-proportional mean of full parameter vectors
// inside each cluster. Expanded per client this is
//   theta = Sum_k d_k * exp(-gamma * G_cluster(k)) / Z * theta_k,
// which is how it is evaluated, in ascending client-id order. At gamma = 0
// every exp factor is exactly 1 and the coefficients reduce to d_k / Sum d,
// so the result is bitwise equal to fedavg.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "glf/client.hpp"
#include "glf/error.hpp"
#include "glf/nn.hpp"

namespace glf {

struct GiniResult {
  double value = 0.0;
  bool degenerate = false;  // every magnitude was zero
};

// Gini of |params| by the sorted form
//   G = 2 Sum_i i * x_(i) / (w * Sum x) - (w + 1) / w,  x ascending, i = 1..w,
// equal to Sum_a Sum_b |x_a - x_b| / (2 w^2 mean(x)).
inline GiniResult gini_coefficient(std::span<const double> params) {
  if (params.empty()) throw DomainError("gini: empty parameter vector");
  std::vector<double> x(params.size());
  std::transform(params.begin(), params.end(), x.begin(), [](double v) { return std::abs(v); });
  std::sort(x.begin(), x.end());
  double total = 0.0, ranked = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += x[i];
    ranked += static_cast<double>(i + 1) * x[i];
  }
  if (total == 0.0) return {0.0, true};
  const double w = static_cast<double>(x.size());
  const double g = 2.0 * ranked / (w * total) - (w + 1.0) / w;
  return {std::clamp(g, 0.0, 1.0), false};
}

inline double gini(std::span<const double> params) { return gini_coefficient(params).value; }

struct LorenzPoint {
  double population_fraction;
  double weight_fraction;
};

// (0,0), then one point per parameter in ascending |weight| order, ending at (1,1).
// All-zero input yields the diagonal.
inline std::vector<LorenzPoint> lorenz_points(std::span<const double> params) {
  if (params.empty()) throw DomainError("lorenz_points: empty parameter vector");
  std::vector<double> x(params.size());
  std::transform(params.begin(), params.end(), x.begin(), [](double v) { return std::abs(v); });
  std::sort(x.begin(), x.end());
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  const double w = static_cast<double>(x.size());
  std::vector<LorenzPoint> pts;
  pts.reserve(x.size() + 1);
  pts.push_back({0.0, 0.0});
  double cum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cum += x[i];
    const double pop = static_cast<double>(i + 1) / w;
    pts.push_back({pop, total > 0.0 ? cum / total : pop});
  }
  pts.back().weight_fraction = 1.0;
  return pts;
}

// ---------------------------------------------------------------------------
// Exact 1-D k-means

struct Segmentation {
  double sse = 0.0;
  std::vector<std::size_t> labels;  // per sorted position, clusters numbered left to right
};

namespace detail {

// cost[i][j]: within-segment SSE of sorted[i..j], by running (Welford) updates.
inline std::vector<std::vector<double>> segment_costs(std::span<const double> sorted) {
  const std::size_t n = sorted.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0, m2 = 0.0;
    for (std::size_t j = i; j < n; ++j) {
      const double cnt = static_cast<double>(j - i + 1);
      const double d = sorted[j] - mean;
      mean += d / cnt;
      m2 += d * (sorted[j] - mean);
      cost[i][j] = std::max(0.0, m2);
    }
  }
  return cost;
}

}  // namespace detail

// Direct SSE of an assignment: Sum over clusters of squared deviation from the cluster mean.
inline double assignment_sse(std::span<const double> values, std::span<const std::size_t> labels) {
  if (values.size() != labels.size()) throw ShapeError("assignment_sse: length mismatch");
  std::size_t k = 0;
  for (auto l : labels) k = std::max(k, l + 1);
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> cnt(k, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[labels[i]] += values[i];
    ++cnt[labels[i]];
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double m = sum[labels[i]] / static_cast<double>(cnt[labels[i]]);
    sse += (values[i] - m) * (values[i] - m);
  }
  return sse;
}

// Optimal k-segmentation of already sorted values, for every k in 1..k_max.
inline std::vector<Segmentation> kmeans_1d_all(std::span<const double> sorted, std::size_t k_max) {
  const std::size_t n = sorted.size();
  if (n == 0) throw DomainError("kmeans_1d: empty input");
  if (!std::is_sorted(sorted.begin(), sorted.end())) throw DomainError("kmeans_1d: input must be sorted");
  k_max = std::min(k_max, n);
  const auto cost = detail::segment_costs(sorted);
  constexpr double inf = std::numeric_limits<double>::infinity();
  // best[k][j]: optimal SSE of sorted[0..j] in k+1 segments; start[k][j]: first index of the last one.
  std::vector<std::vector<double>> best(k_max, std::vector<double>(n, inf));
  std::vector<std::vector<std::size_t>> start(k_max, std::vector<std::size_t>(n, 0));
  for (std::size_t j = 0; j < n; ++j) best[0][j] = cost[0][j];
  for (std::size_t k = 1; k < k_max; ++k) {
    for (std::size_t j = k; j < n; ++j) {
      for (std::size_t s = k; s <= j; ++s) {
        const double c = best[k - 1][s - 1] + cost[s][j];
        if (c < best[k][j]) {
          best[k][j] = c;
          start[k][j] = s;
        }
      }
    }
  }
  std::vector<Segmentation> out;
  for (std::size_t k = 0; k < k_max; ++k) {
    Segmentation seg;
    seg.labels.assign(n, 0);
    std::size_t j = n - 1;
    for (std::size_t kk = k + 1; kk-- > 0;) {
      const std::size_t s = kk == 0 ? 0 : start[kk][j];
      for (std::size_t i = s; i <= j; ++i) seg.labels[i] = kk;
      if (kk == 0) break;
      j = s - 1;
    }
    seg.sse = assignment_sse(sorted, seg.labels);
    out.push_back(std::move(seg));
  }
  return out;
}

struct GiniClustering {
  std::size_t p = 1;                      // chosen cluster count
  std::vector<std::size_t> assignment;    // per input value; cluster 0 holds the smallest values
  std::vector<double> sse_by_k;           // SSE(k) for k = 1, 2, ...
};

inline constexpr double kFlatSse = 1e-12;

// Exact 1-D k-means for k = 1..min(k_max, n, #distinct); p is the elbow, the
// k with the largest discrete second difference of SSE(k). p = 1 when n < 3,
// when the SSE curve is flat, or when no k has a positive second difference.
inline GiniClustering cluster_ginis(std::span<const double> values, std::size_t k_max) {
  if (values.empty()) throw DomainError("cluster_ginis: empty input");
  if (k_max == 0) throw ConfigError("cluster_ginis: k_max must be at least 1");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = values[order[i]];
  const std::size_t distinct = std::set<double>(sorted.begin(), sorted.end()).size();

  const std::size_t k_limit = std::min({k_max, n, distinct});
  // One extra k so the second difference is defined at k_limit itself; past
  // the distinct count the extra segments only split ties and cost nothing.
  const std::size_t k_eval = std::min(k_limit + 1, n);
  auto segs = kmeans_1d_all(sorted, k_eval);

  GiniClustering out;
  for (const auto& s : segs) out.sse_by_k.push_back(s.sse);
  const bool flat = out.sse_by_k.front() - out.sse_by_k.back() <= kFlatSse;
  if (n >= 3 && !flat) {
    double best = 0.0;
    for (std::size_t p = 2; p <= std::min(k_limit, k_eval - 1); ++p) {
      const double d2 = out.sse_by_k[p - 2] - 2.0 * out.sse_by_k[p - 1] + out.sse_by_k[p];
      if (d2 > best) {
        best = d2;
        out.p = p;
      }
    }
  }
  out.assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) out.assignment[order[i]] = segs[out.p - 1].labels[i];
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct ClusterSummary {
  std::size_t cluster_id = 0;
  std::vector<int> members;   // client ids, ascending
  double mean_gini = 0.0;
  std::size_t data_total = 0;  // D_i
  double weight = 0.0;         // normalised w_i
};

struct AggregationResult {
  std::vector<double> params;
  std::vector<ClusterSummary> clusters;
  std::vector<ClientUpdate> accepted;  // canonical order, gini filled in
  std::vector<int> rejected;           // client ids dropped for non-finite parameters
};

namespace detail {

inline std::vector<ClientUpdate> canonical(std::span<const ClientUpdate> updates) {
  std::vector<ClientUpdate> v(updates.begin(), updates.end());
  std::stable_sort(v.begin(), v.end(), [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  return v;
}

inline std::vector<double> weighted_sum(const std::vector<ClientUpdate>& updates, std::span<const double> coef) {
  std::vector<double> out(updates.front().params.size(), 0.0);
  for (std::size_t k = 0; k < updates.size(); ++k)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += coef[k] * updates[k].params[j];
  return out;
}

inline void check_updates(const std::vector<ClientUpdate>& updates, std::size_t dim) {
  if (updates.empty()) throw DomainError("aggregation: no updates");
  for (const auto& u : updates) {
    if (u.params.size() != dim) throw ShapeError("aggregation: update of client " + std::to_string(u.client_id) + " has wrong length");
    if (u.sample_count == 0) throw DomainError("aggregation: client " + std::to_string(u.client_id) + " reports zero samples");
  }
}

}  // namespace detail

// Sum_k (d_k / Sum d) * theta_k in ascending client-id order.
inline std::vector<double> fedavg(std::span<const ClientUpdate> updates) {
  auto v = detail::canonical(updates);
  if (v.empty()) throw DomainError("fedavg: no updates");
  detail::check_updates(v, v.front().params.size());
  double total = 0.0;
  for (const auto& u : v) total += static_cast<double>(u.sample_count);
  std::vector<double> coef;
  for (const auto& u : v) coef.push_back(static_cast<double>(u.sample_count) / total);
  return detail::weighted_sum(v, coef);
}

inline AggregationResult aggregate(std::span<const double> global_params, std::span<const ClientUpdate> updates,
                                   double gamma, std::size_t k_max) {
  if (!(gamma >= 0.0)) throw ConfigError("aggregate: gamma must be nonnegative");
  AggregationResult r;
  for (auto& u : detail::canonical(updates)) {
    if (all_finite(u.params))
      r.accepted.push_back(std::move(u));
    else
      r.rejected.push_back(u.client_id);
  }
  detail::check_updates(r.accepted, global_params.size());

  std::vector<double> ginis;
  for (auto& u : r.accepted) {
    u.gini = gini(u.params);
    ginis.push_back(u.gini);
  }
  auto clustering = cluster_ginis(ginis, k_max);

  r.clusters.resize(clustering.p);
  for (std::size_t c = 0; c < r.clusters.size(); ++c) r.clusters[c].cluster_id = c;
  std::vector<double> gini_sum(clustering.p, 0.0);
  for (std::size_t k = 0; k < r.accepted.size(); ++k) {
    auto& cl = r.clusters[clustering.assignment[k]];
    cl.members.push_back(r.accepted[k].client_id);
    cl.data_total += r.accepted[k].sample_count;
    gini_sum[clustering.assignment[k]] += r.accepted[k].gini;
  }
  double min_gini = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < r.clusters.size(); ++c) {
    r.clusters[c].mean_gini = gini_sum[c] / static_cast<double>(r.clusters[c].members.size());
    min_gini = std::min(min_gini, r.clusters[c].mean_gini);
  }
  // exp factors shifted by the smallest mean Gini: same normalised weights, no underflow.
  std::vector<double> factor(clustering.p);
  double z = 0.0;
  for (std::size_t c = 0; c < r.clusters.size(); ++c) {
    factor[c] = std::exp(-gamma * (r.clusters[c].mean_gini - min_gini));
    z += static_cast<double>(r.clusters[c].data_total) * factor[c];
  }
  if (!(z > 0.0)) throw DomainError("aggregate: zero total data weight");
  for (std::size_t c = 0; c < r.clusters.size(); ++c)
    r.clusters[c].weight = static_cast<double>(r.clusters[c].data_total) * factor[c] / z;

  std::vector<double> coef;
  for (std::size_t k = 0; k < r.accepted.size(); ++k)
    coef.push_back(static_cast<double>(r.accepted[k].sample_count) * factor[clustering.assignment[k]] / z);
  r.params = detail::weighted_sum(r.accepted, coef);
  return r;
}

}  // namespace glf
