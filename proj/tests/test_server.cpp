#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "glf/server.hpp"
#include "oracles.hpp"

using namespace glf;

namespace {

std::vector<ClientUpdate> random_updates(std::size_t k, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0, 1);
  std::uniform_int_distribution<std::size_t> sz(1, 500);
  std::vector<ClientUpdate> out;
  for (std::size_t i = 0; i < k; ++i) {
    ClientUpdate u;
    u.client_id = static_cast<int>(i * 3 + 1);
    u.sample_count = sz(rng);
    // per-client scale spread so Gini values differ
    const double heavy = 0.5 + static_cast<double>(i);
    for (std::size_t j = 0; j < dim; ++j) u.params.push_back(nd(rng) * (j % 7 == 0 ? heavy : 1.0));
    out.push_back(std::move(u));
  }
  return out;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Gini, HandCases) {
  EXPECT_EQ(gini(std::vector<double>{1, 1, 1, 1}), 0.0);
  EXPECT_EQ(gini(std::vector<double>{0, 0, 0, 1}), 0.75);
  EXPECT_NEAR(gini(std::vector<double>{1, 2, 3, 4}), 0.25, 1e-15);
  EXPECT_NEAR(oracle::pairwise_gini({1, 2, 3, 4}), 0.25, 1e-15);
  EXPECT_EQ(gini(std::vector<double>{-1, 1, -1, 1}), 0.0);
}

TEST(Gini, DegenerateAndEmpty) {
  auto g = gini_coefficient(std::vector<double>{0.0, -0.0, 0.0});
  EXPECT_EQ(g.value, 0.0);
  EXPECT_TRUE(g.degenerate);
  EXPECT_THROW(gini(std::vector<double>{}), DomainError);
}

TEST(Gini, MatchesPairwiseOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(2, 1000);
  std::normal_distribution<double> nd(0, 1);
  for (int t = 0; t < 60; ++t) {
    std::vector<double> v(len(rng));
    for (auto& x : v) x = nd(rng) * (t % 3 == 0 ? std::exp(nd(rng)) : 1.0);
    EXPECT_NEAR(gini(v), oracle::pairwise_gini(v), 1e-9);
  }
}

TEST(Gini, ScaleInvariant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0, 1);
  std::vector<double> v(200);
  for (auto& x : v) x = nd(rng);
  for (double c : {-3.0, 0.01, 1e6}) {
    auto w = v;
    for (auto& x : w) x *= c;
    EXPECT_NEAR(gini(w), gini(v), 1e-12);
  }
}

TEST(Lorenz, Examples) {
  auto eq = lorenz_points(std::vector<double>{2, 2, 2, 2});
  for (const auto& p : eq) EXPECT_NEAR(p.population_fraction, p.weight_fraction, 1e-15);
  auto top = lorenz_points(std::vector<double>{0, 0, 0, 1});
  ASSERT_EQ(top.size(), 5u);
  EXPECT_EQ(top[3].population_fraction, 0.75);
  EXPECT_EQ(top[3].weight_fraction, 0.0);
  EXPECT_EQ(top[4].population_fraction, 1.0);
  EXPECT_EQ(top[4].weight_fraction, 1.0);
}

TEST(Lorenz, TrapezoidGiniMatchesAndCurveIsConvex) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 1);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> v(5 + t * 13);
    for (auto& x : v) x = nd(rng);
    auto pts = lorenz_points(v);
    EXPECT_EQ(pts.front().population_fraction, 0.0);
    EXPECT_EQ(pts.front().weight_fraction, 0.0);
    EXPECT_EQ(pts.back().population_fraction, 1.0);
    EXPECT_EQ(pts.back().weight_fraction, 1.0);
    double area = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      EXPECT_GE(pts[i].weight_fraction, pts[i - 1].weight_fraction);
      area += (pts[i].population_fraction - pts[i - 1].population_fraction) *
              (pts[i].weight_fraction + pts[i - 1].weight_fraction) / 2;
      if (i + 1 < pts.size()) {
        const double s1 = pts[i].weight_fraction - pts[i - 1].weight_fraction;
        const double s2 = pts[i + 1].weight_fraction - pts[i].weight_fraction;
        EXPECT_LE(s1, s2 + 1e-12);
      }
    }
    EXPECT_NEAR(1 - 2 * area, gini(v), 1e-9);
  }
}

TEST(KMeans, DpMatchesBruteForceContiguous) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> v(4 + t % 8);
    for (auto& x : v) x = u(rng);
    std::sort(v.begin(), v.end());
    auto segs = kmeans_1d_all(v, 4);
    for (std::size_t k = 1; k <= segs.size(); ++k)
      EXPECT_NEAR(segs[k - 1].sse, oracle::brute_contiguous_sse(v, k), 1e-12);
  }
}

TEST(KMeans, NotWorseThanLloyd) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> v(30);
    for (auto& x : v) x = u(rng) + (t % 2 ? 0.0 : std::floor(u(rng) * 3));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    auto segs = kmeans_1d_all(sorted, 5);
    for (std::size_t k = 1; k <= 5; ++k) EXPECT_LE(segs[k - 1].sse, oracle::lloyd_best_sse(v, k, 20, rng) + 1e-12);
  }
}

TEST(ClusterGinis, TwoTriples) {
  std::vector<double> v{0.50, 0.10, 0.51, 0.11, 0.52, 0.12};
  auto c = cluster_ginis(v, 6);
  EXPECT_EQ(c.p, 2u);
  EXPECT_EQ(c.assignment, (std::vector<std::size_t>{1, 0, 1, 0, 1, 0}));
  EXPECT_NEAR(c.sse_by_k[1], oracle::brute_contiguous_sse(v, 2), 1e-15);
}

TEST(ClusterGinis, IdenticalValuesGiveOneCluster) {
  auto c = cluster_ginis(std::vector<double>{0.3, 0.3, 0.3, 0.3}, 4);
  EXPECT_EQ(c.p, 1u);
  EXPECT_EQ(c.sse_by_k.front(), 0.0);
}

TEST(ClusterGinis, TwoValuesFallBackToOne) {
  EXPECT_EQ(cluster_ginis(std::vector<double>{0.1, 0.9}, 5).p, 1u);
  EXPECT_EQ(cluster_ginis(std::vector<double>{0.7}, 5).p, 1u);
}

TEST(ClusterGinis, ElbowIsLargestSecondDifference) {
  // Equal, evenly spaced groups: SSE falls most from k = 1 to 2, so p = 2.
  std::vector<double> even{0.1, 0.101, 0.102, 0.5, 0.501, 0.9, 0.902, 0.903};
  // A heavy middle group with two outliers: the bend moves to k = 3.
  std::vector<double> heavy{0.1, 0.5, 0.501, 0.5, 0.499, 0.5, 0.502, 0.9};
  for (const auto& v : {even, heavy}) {
    std::vector<double> sse;
    for (std::size_t k = 1; k <= 6; ++k) sse.push_back(oracle::brute_contiguous_sse(v, k));
    std::size_t expect = 1;
    double best = 0.0;
    for (std::size_t p = 2; p <= 5; ++p) {
      const double d2 = sse[p - 2] - 2 * sse[p - 1] + sse[p];
      if (d2 > best) {
        best = d2;
        expect = p;
      }
    }
    auto c = cluster_ginis(v, 5);
    EXPECT_EQ(c.p, expect);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(c.sse_by_k[k], sse[k], 1e-12);
  }
  EXPECT_EQ(cluster_ginis(even, 8).p, 2u);
  auto h = cluster_ginis(heavy, 8);
  EXPECT_EQ(h.p, 3u);
  EXPECT_EQ(h.assignment, (std::vector<std::size_t>{0, 1, 1, 1, 1, 1, 1, 2}));
}

TEST(ClusterGinis, Errors) {
  EXPECT_THROW(cluster_ginis(std::vector<double>{}, 3), DomainError);
  EXPECT_THROW(cluster_ginis(std::vector<double>{0.1}, 0), ConfigError);
}

TEST(FedAvg, Examples) {
  ClientUpdate a{0, {1.0, -2.0}, 10}, b{1, {-1.0, 2.0}, 10};
  EXPECT_EQ(fedavg(std::vector<ClientUpdate>{a}), a.params);
  auto z = fedavg(std::vector<ClientUpdate>{a, b});
  EXPECT_EQ(z, (std::vector<double>{0.0, 0.0}));
  ClientUpdate c{0, {0.0}, 1}, d{1, {4.0}, 3};
  EXPECT_EQ(fedavg(std::vector<ClientUpdate>{c, d}), std::vector<double>{3.0});
}

TEST(Aggregate, GammaZeroIsBitwiseFedAvg) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    auto ups = random_updates(2 + t % 7, 50, rng);
    std::vector<double> global(50, 0.0);
    auto r = aggregate(global, ups, 0.0, 10);
    EXPECT_TRUE(bitwise_equal(r.params, fedavg(ups)));
  }
}

TEST(Aggregate, OrderInvariant) {
  std::mt19937_64 rng(7);
  auto ups = random_updates(6, 40, rng);
  std::vector<double> global(40, 0.0);
  auto a = aggregate(global, ups, 0.6, 10);
  std::reverse(ups.begin(), ups.end());
  auto b = aggregate(global, ups, 0.6, 10);
  EXPECT_TRUE(bitwise_equal(a.params, b.params));
}

TEST(Aggregate, ClusterWeightsWorkedExample) {
  // Two clusters with mean Gini 0.2 and 0.4 and data totals 100 and 300.
  auto make = [](int id, double g, std::size_t d) {
    // |params| = [0 x a, 1 x b] has Gini a/(a+b); 5 entries: 1 zero -> 0.2, 2 zeros -> 0.4
    std::vector<double> p(5, 1.0);
    for (int i = 0; i < static_cast<int>(std::lround(g * 5)); ++i) p[i] = 0.0;
    return ClientUpdate{id, p, d};
  };
  std::vector<ClientUpdate> ups{make(0, 0.2, 40), make(1, 0.2, 60), make(2, 0.4, 100), make(3, 0.4, 200)};
  auto r = aggregate(std::vector<double>(5, 0.0), ups, 0.6, 4);
  ASSERT_EQ(r.clusters.size(), 2u);
  EXPECT_NEAR(r.clusters[0].mean_gini, 0.2, 1e-15);
  EXPECT_EQ(r.clusters[0].data_total, 100u);
  EXPECT_EQ(r.clusters[1].data_total, 300u);
  const double w0 = 100 * std::exp(-0.12), w1 = 300 * std::exp(-0.24);
  EXPECT_NEAR(r.clusters[0].weight, w0 / (w0 + w1), 1e-12);
  EXPECT_NEAR(r.clusters[0].weight, 0.2732, 5e-5);
  EXPECT_NEAR(r.clusters[1].weight, 0.7268, 5e-5);
  // new global = Sum_i w_i * (data-weighted cluster mean)
  for (std::size_t j = 0; j < 5; ++j) {
    const double mu0 = (40 * ups[0].params[j] + 60 * ups[1].params[j]) / 100;
    const double mu1 = (100 * ups[2].params[j] + 200 * ups[3].params[j]) / 300;
    EXPECT_NEAR(r.params[j], r.clusters[0].weight * mu0 + r.clusters[1].weight * mu1, 1e-14);
  }
}

TEST(Aggregate, LargeGammaSelectsFairestCluster) {
  std::vector<ClientUpdate> ups{{0, {1, 1, 1, 0}, 10}, {1, {1, 1, 1, 0}, 10}, {2, {1, 0, 0, 0}, 10}, {3, {1, 0, 0, 0}, 10}};
  auto r = aggregate(std::vector<double>(4, 0.0), ups, 1e3, 4);
  ASSERT_EQ(r.clusters.size(), 2u);
  EXPECT_NEAR(r.clusters[0].weight, 1.0, 1e-12);
  EXPECT_LT(r.clusters[1].weight, 1e-12);
}

TEST(Aggregate, WeightsSumToOneAndCoverAllClients) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    auto ups = random_updates(6, 30, rng);
    auto r = aggregate(std::vector<double>(30, 0.0), ups, 0.6, 6);
    double s = 0;
    std::size_t members = 0;
    for (const auto& c : r.clusters) {
      s += c.weight;
      members += c.members.size();
      EXPECT_GT(c.data_total, 0u);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(members, ups.size());
  }
}

TEST(Aggregate, LoweringClusterGiniRaisesItsWeight) {
  // cluster A: |params| with one zero in five (Gini 0.2) or none (Gini 0); cluster B fixed at 0.4
  auto weight_a = [](std::vector<double> a_params) {
    std::vector<ClientUpdate> ups{{0, a_params, 100}, {1, a_params, 100}, {2, {0, 0, 1, 1, 1}, 300}, {3, {0, 0, 1, 1, 1}, 300}};
    auto r = aggregate(std::vector<double>(5, 0.0), ups, 0.6, 4);
    EXPECT_EQ(r.clusters.size(), 2u);
    return r.clusters[0].weight;
  };
  EXPECT_GT(weight_a({1, 1, 1, 1, 1}), weight_a({0, 1, 1, 1, 1}));
}

TEST(Aggregate, NonFiniteUpdateIsRejected) {
  std::vector<ClientUpdate> ups{{0, {1.0, 2.0}, 10}, {1, {NAN, 0.0}, 10}, {2, {3.0, 4.0}, 10}};
  auto r = aggregate(std::vector<double>(2, 0.0), ups, 0.0, 3);
  EXPECT_EQ(r.rejected, std::vector<int>{1});
  EXPECT_EQ(r.params, (std::vector<double>{2.0, 3.0}));
}

TEST(Aggregate, Errors) {
  EXPECT_THROW(aggregate(std::vector<double>(2, 0.0), std::vector<ClientUpdate>{}, 0.5, 3), DomainError);
  EXPECT_THROW(aggregate(std::vector<double>(2, 0.0), std::vector<ClientUpdate>{{0, {1.0}, 3}}, 0.5, 3), ShapeError);
  EXPECT_THROW(aggregate(std::vector<double>(1, 0.0), std::vector<ClientUpdate>{{0, {1.0}, 0}}, 0.5, 3), DomainError);
  EXPECT_THROW(aggregate(std::vector<double>(1, 0.0), std::vector<ClientUpdate>{{0, {1.0}, 3}}, -1.0, 3), ConfigError);
}
