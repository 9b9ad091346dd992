// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "glf/experiment.hpp"
#include "oracles.hpp"

using namespace glf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kSource = GLF_SOURCE_DIR;
const fs::path kWork = fs::current_path() / "acceptance_runs";

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

ExperimentConfig synthetic_config() { return load_config(kSource / "configs" / "synthetic.json"); }
ExperimentConfig adult_config() { return load_config(kSource / "configs" / "adult.json"); }

struct Run {
  fs::path dir;
  RunResult result;
  double seconds = 0.0;
  const RoundMetrics& last() const { return result.rounds.back(); }
  double eod(const std::string& attr) const {
    const auto& v = last().eod.at(attr);
    return v ? *v : std::numeric_limits<double>::quiet_NaN();
  }
};

// Runs are cached by name so criteria can share them.
std::map<std::string, Run> g_runs;

const Run& run(const std::string& name, const ExperimentConfig& c) {
  auto it = g_runs.find(name);
  if (it != g_runs.end()) return it->second;
  const auto dir = kWork / name;
  fs::remove_all(dir);
  auto t0 = std::chrono::steady_clock::now();
  Run r{dir, run_experiment(c, dir), 0.0};
  r.seconds = seconds_since(t0);
  std::cerr << "  [run " << name << ": " << num(r.seconds, 3) << " s]\n";
  return g_runs.emplace(name, std::move(r)).first->second;
}

ExperimentConfig with_mode(ExperimentConfig c, AggregationMode m) {
  c.mode = m;
  return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> width(1, 6), depth(0, 2), rows(1, 8);
  double worst = 0.0;
  int redraws = 0;
  for (int net_i = 0; net_i < 20; ++net_i) {
    Architecture a{width(rng), {}};
    for (std::size_t l = depth(rng); l > 0; --l) a.hidden_dims.push_back(width(rng));
    auto net = make_net(a, rng());
    Matrix x;
    // Keep every hidden pre-activation clear of the ReLU kink so the
    // finite-difference reference is itself valid.
    do {
      for (auto& p : net.params) p += 0.1 * normal(rng);
      x = Matrix(rows(rng), a.input_dim);
      for (auto& v : x.data) v = normal(rng);
      ++redraws;
    } while (oracle::min_preactivation(a, net.params, x) < 1e-3);
    --redraws;
    std::vector<int> y(x.rows);
    std::vector<double> w(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
      y[r] = static_cast<int>(rng() % 2);
      w[r] = 0.25 + std::uniform_real_distribution<double>(0, 2)(rng);
    }
    auto g = backward(net, x, y, w);
    auto fd = oracle::fd_gradient(a, net.params, x, y, w, 1e-5);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double scale = std::max({std::abs(g[i]), std::abs(fd[i]), 1e-3});
      worst = std::max(worst, std::abs(g[i] - fd[i]) / scale);
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 10.0, "max relative error " + num(worst) + " over 20 nets, " + num(secs, 3) +
                                           " s, " + std::to_string(redraws) + " kink redraws"};
}

Outcome gini_equivalence() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> len(2, 1000);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(len(rng));
    const double spread = std::exp(2 * normal(rng));
    for (auto& x : v) x = spread * normal(rng) * (rng() % 5 == 0 ? 0.0 : 1.0);
    worst = std::max(worst, std::abs(gini(v) - oracle::pairwise_gini(v)));
  }
  const double a = gini(std::vector<double>{1, 1, 1, 1});
  const double b = gini(std::vector<double>{0, 0, 0, 1});
  return {worst <= 1e-9 && a == 0.0 && b == 0.75,
          "max |sort - pairwise| " + num(worst) + "; [1,1,1,1] -> " + num(a) + ", [0,0,0,1] -> " + num(b)};
}

Outcome fedavg_degeneracy() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  int bitwise = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 12, dim = 1 + rng() % 200;
    std::vector<ClientUpdate> ups;
    for (std::size_t k = 0; k < n; ++k) {
      ClientUpdate u{static_cast<int>((k * 7 + t) % 50), std::vector<double>(dim), 1 + rng() % 5000};
      for (auto& p : u.params) p = normal(rng) * std::exp(normal(rng));
      ups.push_back(u);
    }
    std::shuffle(ups.begin(), ups.end(), rng);
    auto agg = aggregate(std::vector<double>(dim, 0.0), ups, 0.0, 1 + rng() % 10);
    auto avg = fedavg(ups);
    bitwise += agg.params.size() == avg.size() &&
               std::memcmp(agg.params.data(), avg.data(), avg.size() * sizeof(double)) == 0;
  }
  return {bitwise == 50, std::to_string(bitwise) + "/50 update sets bitwise equal"};
}

Outcome pipeline_degeneracy() {
  auto c = synthetic_config();
  c.gamma = 0.0;
  c.constraints.iterations = 0;
  const auto& g = run("degenerate_glocalfair", with_mode(c, AggregationMode::GLocalFair));
  const auto& f = run("degenerate_fedavg", with_mode(c, AggregationMode::FedAvg));
  const auto a = slurp(g.dir / "metrics.jsonl"), b = slurp(f.dir / "metrics.jsonl");
  return {!a.empty() && a == b, "metrics.jsonl " + std::string(a == b ? "identical" : "differs") + " (" +
                                    std::to_string(a.size()) + " bytes, " + std::to_string(c.rounds) + " rounds)"};
}

Outcome kmeans_optimality() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  int ok = 0, comparisons = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<double> v(n);
    const std::size_t modes = 1 + rng() % 5;
    for (auto& x : v) x = double(rng() % modes) + 0.1 * normal(rng);
    std::sort(v.begin(), v.end());
    const std::size_t k_max = std::min<std::size_t>(n, 8);
    auto dp = kmeans_1d_all(v, k_max);
    bool all = true;
    for (std::size_t k = 1; k <= k_max; ++k) {
      const double lloyd = oracle::lloyd_best_sse(v, k, 100, rng);
      const double mine = dp[k - 1].sse;
      const double recomputed = oracle::sse_of(v, dp[k - 1].labels, k);
      const double tol = 1e-12 * (1.0 + lloyd);
      all &= mine <= lloyd + tol && std::abs(recomputed - mine) <= 1e-9 * (1.0 + mine);
      worst_gap = std::max(worst_gap, mine - lloyd);
      ++comparisons;
    }
    ok += all;
  }
  return {ok == 50, std::to_string(ok) + "/50 instances (" + std::to_string(comparisons) +
                        " k values), max DP - Lloyd SSE " + num(worst_gap)};
}

Outcome lambda_feasibility() {
  std::vector<std::pair<std::string, ExperimentConfig>> runs{{"synthetic_glocalfair", synthetic_config()}};
  auto alpha_low = synthetic_config();
  alpha_low.partition.alpha = 0.1;
  runs.emplace_back("synthetic_alpha0.1_glocalfair", alpha_low);
  std::size_t records = 0, bad = 0;
  double max_l1 = 0.0, min_entry = 0.0;
  double radius = 0.0;
  for (const auto& [name, c] : runs) {
    const auto& r = run(name, c);
    radius = c.constraints.lambda_radius;
    std::ifstream f(r.dir / "traces.jsonl");
    for (std::string line; std::getline(f, line);) {
      if (line.empty()) continue;
      const json parsed = json::parse(line);
      for (const auto& rec : parsed.at("trace")) {
        double l1 = 0.0;
        bool ok = true;
        for (double v : rec["lambda"]) {
          ok &= v >= 0.0;
          min_entry = std::min(min_entry, v);
          l1 += v;
        }
        ok &= l1 <= radius * (1 + 1e-12);
        max_l1 = std::max(max_l1, l1);
        bad += !ok;
        ++records;
      }
    }
  }
  return {records > 0 && bad == 0, std::to_string(records) + " trace records, " + std::to_string(bad) +
                                       " infeasible; max |lambda|_1 " + num(max_l1, 6) + " (R = " + num(radius) +
                                       "), min entry " + num(min_entry)};
}

Outcome constraint_satisfaction() {
  auto t0 = std::chrono::steady_clock::now();
  const auto c = synthetic_config();
  const auto fed = build_federation(c);
  const auto arch = architecture_for(c, fed);
  const auto init = make_net(arch, c.seed);
  ClientConfig cc{arch, c.constraints, TrainingOptions{c.optimizer, c.batch_size, true}};
  int within = 0;
  std::string gaps;
  for (const auto& client : fed.clients) {
    auto r = local_update(init.params, client, cc, client_round_seed(c.seed, 1, client.client_id));
    const auto& g = r.best_validation;
    // Largest deviation of a group FNR from the overall FNR.
    const bool defined = g.active[0] && g.active[1];
    const double gap = std::max(g.g[0], g.g[1]) + c.constraints.tau_fnr;
    // Two-group gap for reference.
    DenseNet net{arch, r.update.params, 0};
    auto rates = group_rates(predict(net, client.validation.x), client.validation.labels, client.validation.groups);
    const double pair_gap = rates.group[0].fnr && rates.group[1].fnr ? std::abs(*rates.group[0].fnr - *rates.group[1].fnr)
                                                                     : std::numeric_limits<double>::quiet_NaN();
    within += defined && gap <= c.constraints.tau_fnr + 0.05;
    gaps += (gaps.empty() ? "" : " ") + num(gap, 3) + "/" + num(pair_gap, 3);
  }
  const double secs = seconds_since(t0);
  return {within >= 7 && secs < 300.0, std::to_string(within) + "/8 clients with FNR deviation <= " +
                                           num(c.constraints.tau_fnr + 0.05) + " [deviation/two-group gap: " + gaps +
                                           "], " + num(secs, 3) + " s"};
}

Outcome determinism() {
  auto c = synthetic_config();
  c.workers = 1;
  const auto& a = run("synthetic_glocalfair", c);
  c.workers = 4;
  const auto& b = run("synthetic_glocalfair_workers4", c);
  auto ad = adult_config();
  ad.workers = 1;
  const auto& x = run("adult_glocalfair", ad);
  ad.workers = 3;
  const auto& y = run("adult_glocalfair_workers3", ad);
  std::vector<std::string> differing;
  for (const char* f : {"metrics.jsonl", "traces.jsonl", "partition.json", "config.json", "final.ckpt",
                        "final_predictions.csv", "summary.json"}) {
    if (slurp(a.dir / f) != slurp(b.dir / f)) differing.push_back(std::string("synthetic/") + f);
    if (slurp(x.dir / f) != slurp(y.dir / f)) differing.push_back(std::string("adult/") + f);
  }
  std::string d;
  for (const auto& s : differing) d += " " + s;
  return {differing.empty(), differing.empty() ? "synthetic (1 vs 4 workers) and adult (1 vs 3 workers) artifacts identical"
                                               : "differing:" + d};
}

Outcome adult_global_fairness() {
  auto c = adult_config();
  const auto& f = run("adult_fedavg", with_mode(c, AggregationMode::FedAvg));
  const auto& g = run("adult_glocalfair", with_mode(c, AggregationMode::GLocalFair));
  const double fe = f.eod("gender"), ge = g.eod("gender");
  const double fu = f.last().utility, gu = g.last().utility;
  const bool fair = ge <= 0.5 * fe;
  const bool util = std::abs(gu - fu) <= 0.05;
  const double secs = std::max(f.seconds, g.seconds);
  return {fair && util && secs < 600.0,
          "gender EOD glocalfair " + num(ge) + " vs fedavg " + num(fe) + " (need <= " + num(0.5 * fe) +
              "); utility " + num(gu) + " vs " + num(fu) + "; slowest run " + num(secs, 3) + " s"};
}

Outcome local_fairness() {
  auto c = synthetic_config();
  const auto& g = run("synthetic_glocalfair", with_mode(c, AggregationMode::GLocalFair));
  const auto& f = run("synthetic_fedavg", with_mode(c, AggregationMode::FedAvg));
  const auto& gl = g.last().local_eod;
  const auto& fl = f.last().local_eod;
  if (!gl.mean || !fl.mean) return {false, "local EOD undefined"};
  const bool mean_ok = *gl.mean <= 0.7 * *fl.mean;
  const bool std_ok = *gl.std < *fl.std;
  return {mean_ok && std_ok, "synthetic local EOD mean " + num(*gl.mean) + " vs " + num(*fl.mean) + " (need <= " +
                                 num(0.7 * *fl.mean) + "), std " + num(*gl.std) + " vs " + num(*fl.std)};
}

Outcome gamma_monotonicity() {
  auto c = synthetic_config();
  auto lo = c;
  lo.gamma = 0.2;
  const auto& a = run("synthetic_gamma0.2", lo);
  const auto& b = run("synthetic_glocalfair", c);  // gamma 0.6
  const std::string attr = "group";
  const double ea = a.eod(attr), eb = b.eod(attr);
  const double ua = a.last().utility, ub = b.last().utility;
  return {eb < ea && ub <= ua + 0.01, "EOD gamma 0.6 " + num(eb) + " vs gamma 0.2 " + num(ea) + "; utility " +
                                          num(ub) + " vs " + num(ua)};
}

Outcome heterogeneity() {
  auto base = synthetic_config();
  auto at = [&](double alpha, AggregationMode m) -> const Run& {
    auto c = with_mode(base, m);
    c.partition.alpha = alpha;
    const std::string name = std::string("synthetic_alpha") + num(alpha) + (m == AggregationMode::FedAvg ? "_fedavg" : "_glocalfair");
    if (alpha == base.partition.alpha)
      return run(m == AggregationMode::FedAvg ? "synthetic_fedavg" : "synthetic_glocalfair", c);
    return run(name, c);
  };
  const double g_lo = at(0.1, AggregationMode::GLocalFair).eod("group");
  const double g_hi = at(100, AggregationMode::GLocalFair).eod("group");
  const double f_lo = at(0.1, AggregationMode::FedAvg).eod("group");
  const double f_hi = at(100, AggregationMode::FedAvg).eod("group");
  const double dg = g_lo - g_hi, df = f_lo - f_hi;
  return {dg <= df, "EOD degradation alpha 100 -> 0.1: glocalfair " + num(g_hi) + " -> " + num(g_lo) + " (" +
                        num(dg) + "), fedavg " + num(f_hi) + " -> " + num(f_lo) + " (" + num(df) + ")"};
}

Outcome constraint_emphasis() {
  bool all = true;
  std::string d;
  for (std::uint64_t seed : {1, 2}) {
    for (bool fpr_only : {true, false}) {
      auto c = synthetic_config();
      c.seed = seed;
      if (fpr_only)
        c.constraints.tau_fnr = 1.0;
      else
        c.constraints.tau_fpr = 1.0;
      const std::string name = std::string("synthetic_") + (fpr_only ? "fpr_only" : "fnr_only") + "_seed" + std::to_string(seed);
      const auto& r = run(name, c);
      const auto fed = build_federation(c);
      auto x = gather_rows(fed.dataset.features, fed.global_test);
      auto labels = gather<int>(fed.dataset.labels, fed.global_test);
      auto pr = precision_recall(predict(r.result.final_net, x), labels);
      if (!pr.precision || !pr.recall) {
        all = false;
        d += " " + name + ": undefined;";
        continue;
      }
      const bool ok = fpr_only ? *pr.precision >= *pr.recall : *pr.recall >= *pr.precision;
      all &= ok;
      d += std::string(" ") + (fpr_only ? "FPR-only" : "FNR-only") + " seed " + std::to_string(seed) + ": P " +
           num(*pr.precision) + " R " + num(*pr.recall) + (ok ? "" : " (wrong order)") + ";";
    }
  }
  return {all, d.substr(1)};
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 gradient correctness", gradient_check},
      {"2 gini equivalence", gini_equivalence},
      {"3 fedavg degeneracy", fedavg_degeneracy},
      {"4 pipeline degeneracy", pipeline_degeneracy},
      {"5 1-d k-means optimality", kmeans_optimality},
      {"6 lambda feasibility", lambda_feasibility},
      {"7 constraint satisfaction", constraint_satisfaction},
      {"8 determinism", determinism},
      {"9 adult global fairness", adult_global_fairness},
      {"10 local fairness trend", local_fairness},
      {"11 gamma monotonicity", gamma_monotonicity},
      {"12 heterogeneity robustness", heterogeneity},
      {"13 constraint emphasis", constraint_emphasis},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
