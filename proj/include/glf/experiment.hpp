#pragma once

// Config-driven federated experiments: round loop, evaluation, run-directory
// artifacts and cross-run reports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "glf/checkpoint.hpp"
#include "glf/client.hpp"
#include "glf/constraints.hpp"
#include "glf/data.hpp"
#include "glf/error.hpp"
#include "glf/metrics.hpp"
#include "glf/nn.hpp"
#include "glf/rng.hpp"
#include "glf/server.hpp"

namespace glf {

using json = nlohmann::json;

enum class AggregationMode { GLocalFair, FedAvg };

struct DatasetConfig {
  enum class Source { AdultCsv, Synthetic } source = Source::Synthetic;
  std::filesystem::path path;  // adult-csv only
  SynthSpec synth;             // synthetic only
  std::uint64_t synth_seed = 0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::string constrained_attribute;  // empty: the dataset's first sensitive attribute
  double test_fraction = 0.1;
  std::size_t n_clients = 4;
  PartitionSpec partition;
  std::size_t rounds = 30;
  double participation = 0.75;
  std::vector<std::size_t> hidden_dims{32, 16};
  OptimizerConfig optimizer;
  std::size_t batch_size = 64;
  ConstraintSpec constraints;
  double gamma = 0.6;
  std::size_t k_max = 0;  // 0: min(10, selected clients)
  AggregationMode mode = AggregationMode::GLocalFair;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  std::size_t workers = 1;  // execution only; never affects results

  std::size_t selected_per_round() const {
    return static_cast<std::size_t>(std::ceil(participation * static_cast<double>(n_clients) - 1e-12));
  }

  void validate() const {
    if (rounds < 1) throw ConfigError("config: rounds must be at least 1");
    if (n_clients < 1) throw ConfigError("config: n_clients must be at least 1");
    if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("config: participation must lie in (0, 1]");
    if (selected_per_round() < 1) throw ConfigError("config: no client would be selected per round");
    if (!(gamma >= 0.0)) throw ConfigError("config: gamma must be nonnegative");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("config: test_fraction must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("config: batch_size must be at least 1");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("config: learning rate must be positive");
    if (partition.mode == PartitionMode::Dirichlet && !(partition.alpha > 0.0))
      throw ConfigError("config: alpha must be positive");
    constraints.validate();
    for (auto h : hidden_dims)
      if (h == 0) throw ConfigError("config: hidden layer widths must be positive");
  }
};

// ---------------------------------------------------------------------------
// JSON <-> config

namespace detail {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: key '") + key + "': " + e.what());
  }
}

template <typename T, std::size_t N>
void read_pair(const json& j, const char* key, std::array<T, N>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != N) throw ConfigError(std::string("config: '") + key + "' must be an array of " + std::to_string(N));
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i].get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  using detail::read_opt;
  detail::reject_unknown(j,
                         {"dataset", "constrained_attribute", "test_fraction", "n_clients", "partition", "rounds",
                          "participation", "architecture", "optimizer", "constraints", "gamma", "k_max", "aggregation",
                          "seed", "output_dir", "workers"},
                         "config");
  ExperimentConfig c;
  if (!j.contains("dataset")) throw ConfigError("config: 'dataset' is required");
  const auto& d = j.at("dataset");
  detail::reject_unknown(d,
                         {"source", "path", "seed", "group_sizes", "positive_rates", "positive_shift", "negative_shift",
                          "separation", "signal_features", "distractor_features", "noise", "group_feature", "attribute"},
                         "dataset");
  std::string source;
  read_opt(d, "source", source);
  if (source == "adult-csv") {
    c.dataset.source = DatasetConfig::Source::AdultCsv;
    std::string p;
    read_opt(d, "path", p);
    if (p.empty()) throw ConfigError("config: adult-csv dataset needs a 'path'");
    c.dataset.path = std::filesystem::path(p).is_relative() && !base_dir.empty() ? base_dir / p : std::filesystem::path(p);
  } else if (source == "synthetic") {
    c.dataset.source = DatasetConfig::Source::Synthetic;
    auto& s = c.dataset.synth;
    read_opt(d, "seed", c.dataset.synth_seed);
    detail::read_pair(d, "group_sizes", s.group_sizes);
    detail::read_pair(d, "positive_rates", s.positive_rates);
    detail::read_pair(d, "positive_shift", s.positive_shift);
    detail::read_pair(d, "negative_shift", s.negative_shift);
    read_opt(d, "separation", s.separation);
    read_opt(d, "signal_features", s.signal_features);
    read_opt(d, "distractor_features", s.distractor_features);
    read_opt(d, "noise", s.noise);
    read_opt(d, "group_feature", s.group_feature);
    read_opt(d, "attribute", s.attribute);
  } else {
    throw ConfigError("config: dataset source must be 'adult-csv' or 'synthetic'");
  }

  read_opt(j, "constrained_attribute", c.constrained_attribute);
  read_opt(j, "test_fraction", c.test_fraction);
  read_opt(j, "n_clients", c.n_clients);
  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    detail::reject_unknown(p, {"mode", "alpha", "min_samples"}, "partition");
    std::string mode = "dirichlet";
    read_opt(p, "mode", mode);
    if (mode == "dirichlet")
      c.partition.mode = PartitionMode::Dirichlet;
    else if (mode == "four-combination")
      c.partition.mode = PartitionMode::FourCombination;
    else
      throw ConfigError("config: partition mode must be 'dirichlet' or 'four-combination'");
    read_opt(p, "alpha", c.partition.alpha);
    read_opt(p, "min_samples", c.partition.min_samples);
  }
  read_opt(j, "rounds", c.rounds);
  read_opt(j, "participation", c.participation);
  if (j.contains("architecture")) {
    detail::reject_unknown(j.at("architecture"), {"hidden_dims"}, "architecture");
    read_opt(j.at("architecture"), "hidden_dims", c.hidden_dims);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::reject_unknown(o, {"kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon", "batch_size"}, "optimizer");
    std::string kind = "sgd-momentum";
    read_opt(o, "kind", kind);
    if (kind == "sgd-momentum")
      c.optimizer.kind = OptimizerKind::SgdMomentum;
    else if (kind == "adam")
      c.optimizer.kind = OptimizerKind::Adam;
    else
      throw ConfigError("config: optimizer kind must be 'sgd-momentum' or 'adam'");
    read_opt(o, "learning_rate", c.optimizer.learning_rate);
    read_opt(o, "momentum", c.optimizer.momentum);
    read_opt(o, "beta1", c.optimizer.beta1);
    read_opt(o, "beta2", c.optimizer.beta2);
    read_opt(o, "epsilon", c.optimizer.epsilon);
    read_opt(o, "batch_size", c.batch_size);
  }
  if (j.contains("constraints")) {
    const auto& k = j.at("constraints");
    detail::reject_unknown(k,
                           {"tau_fnr", "tau_fpr", "surrogate", "temperature", "lambda_lr", "lambda_radius", "iterations",
                            "warmup_epochs", "schedule"},
                           "constraints");
    auto& s = c.constraints;
    read_opt(k, "tau_fnr", s.tau_fnr);
    read_opt(k, "tau_fpr", s.tau_fpr);
    std::string sur = "sigmoid";
    read_opt(k, "surrogate", sur);
    if (sur == "sigmoid")
      s.surrogate = SurrogateKind::Sigmoid;
    else if (sur == "hinge")
      s.surrogate = SurrogateKind::Hinge;
    else
      throw ConfigError("config: surrogate must be 'sigmoid' or 'hinge'");
    read_opt(k, "temperature", s.temperature);
    read_opt(k, "lambda_lr", s.lambda_lr);
    read_opt(k, "lambda_radius", s.lambda_radius);
    read_opt(k, "iterations", s.iterations);
    read_opt(k, "warmup_epochs", s.warmup_epochs);
    if (k.contains("schedule") && !k.at("schedule").is_null()) {
      const auto& b = k.at("schedule");
      detail::reject_unknown(b, {"theta_norm", "grad_norm", "dual_grad"}, "schedule");
      StepBounds sb;
      read_opt(b, "theta_norm", sb.theta_norm);
      read_opt(b, "grad_norm", sb.grad_norm);
      read_opt(b, "dual_grad", sb.dual_grad);
      s.schedule = sb;
    }
  }
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "k_max", c.k_max);
  std::string agg = "glocalfair";
  read_opt(j, "aggregation", agg);
  if (agg == "glocalfair")
    c.mode = AggregationMode::GLocalFair;
  else if (agg == "fedavg")
    c.mode = AggregationMode::FedAvg;
  else
    throw ConfigError("config: aggregation must be 'glocalfair' or 'fedavg'");
  read_opt(j, "seed", c.seed);
  std::string out;
  read_opt(j, "output_dir", out);
  if (!out.empty()) c.output_dir = out;
  read_opt(j, "workers", c.workers);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

// Result-determining fields only: output_dir and workers are left out so two
// runs of one experiment produce identical run directories.
inline json config_to_json(const ExperimentConfig& c) {
  json d;
  if (c.dataset.source == DatasetConfig::Source::AdultCsv) {
    d = {{"source", "adult-csv"}, {"path", c.dataset.path.generic_string()}};
  } else {
    const auto& s = c.dataset.synth;
    d = {{"source", "synthetic"},
         {"seed", c.dataset.synth_seed},
         {"group_sizes", s.group_sizes},
         {"positive_rates", s.positive_rates},
         {"positive_shift", s.positive_shift},
         {"negative_shift", s.negative_shift},
         {"separation", s.separation},
         {"signal_features", s.signal_features},
         {"distractor_features", s.distractor_features},
         {"noise", s.noise},
         {"group_feature", s.group_feature},
         {"attribute", s.attribute}};
  }
  json k = {{"tau_fnr", c.constraints.tau_fnr},
            {"tau_fpr", c.constraints.tau_fpr},
            {"surrogate", c.constraints.surrogate == SurrogateKind::Sigmoid ? "sigmoid" : "hinge"},
            {"temperature", c.constraints.temperature},
            {"lambda_lr", c.constraints.lambda_lr},
            {"lambda_radius", c.constraints.lambda_radius},
            {"iterations", c.constraints.iterations},
            {"warmup_epochs", c.constraints.warmup_epochs}};
  if (c.constraints.schedule)
    k["schedule"] = {{"theta_norm", c.constraints.schedule->theta_norm},
                     {"grad_norm", c.constraints.schedule->grad_norm},
                     {"dual_grad", c.constraints.schedule->dual_grad}};
  return {{"dataset", d},
          {"constrained_attribute", c.constrained_attribute},
          {"test_fraction", c.test_fraction},
          {"n_clients", c.n_clients},
          {"partition",
           {{"mode", c.partition.mode == PartitionMode::Dirichlet ? "dirichlet" : "four-combination"},
            {"alpha", c.partition.alpha},
            {"min_samples", c.partition.min_samples}}},
          {"rounds", c.rounds},
          {"participation", c.participation},
          {"architecture", {{"hidden_dims", c.hidden_dims}}},
          {"optimizer",
           {{"kind", c.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd-momentum"},
            {"learning_rate", c.optimizer.learning_rate},
            {"momentum", c.optimizer.momentum},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon},
            {"batch_size", c.batch_size}}},
          {"constraints", k},
          {"gamma", c.gamma},
          {"k_max", c.k_max},
          {"aggregation", c.mode == AggregationMode::FedAvg ? "fedavg" : "glocalfair"},
          {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Federation: data, shards and per-client splits

struct Federation {
  TabularDataset dataset;
  std::string attribute;  // constrained sensitive attribute
  std::vector<std::size_t> global_test;
  std::vector<ClientShard> shards;
  std::vector<ClientData> clients;
};

inline TabularDataset load_dataset(const DatasetConfig& d) {
  if (d.source == DatasetConfig::Source::AdultCsv) return load_adult_csv(d.path);
  return synth_generate(d.synth, d.synth_seed);
}

inline Split make_split(const TabularDataset& ds, std::span<const std::size_t> rows, const std::string& attribute) {
  return Split{gather_rows(ds.features, rows), gather<int>(ds.labels, rows), gather<int>(ds.groups(attribute), rows)};
}

inline Federation build_federation(const ExperimentConfig& c) {
  Federation f;
  f.dataset = load_dataset(c.dataset);
  if (f.dataset.sensitive.empty()) throw ConfigError("federation: dataset has no sensitive attribute");
  f.attribute = c.constrained_attribute.empty() ? f.dataset.sensitive.front().name : c.constrained_attribute;
  f.dataset.groups(f.attribute);  // validates the name

  auto [pool, test] = hold_out(f.dataset.size(), c.test_fraction, c.seed);
  f.global_test = std::move(test);
  f.shards = partition(f.dataset, pool, c.n_clients, c.partition, c.seed);
  for (auto& s : f.shards) {
    split_70_10_20(s, c.seed);
    ClientData cd;
    cd.client_id = s.client_id;
    cd.train = make_split(f.dataset, s.train, f.attribute);
    cd.validation = make_split(f.dataset, s.validation, f.attribute);
    cd.test = make_split(f.dataset, s.test, f.attribute);
    f.clients.push_back(std::move(cd));
  }
  return f;
}

inline json partition_manifest(const Federation& f) {
  json clients = json::array();
  for (const auto& s : f.shards)
    clients.push_back({{"client_id", s.client_id},
                       {"indices", s.indices},
                       {"train", s.train},
                       {"validation", s.validation},
                       {"test", s.test}});
  return {{"rows", f.dataset.size()},
          {"dropped_rows", f.dataset.dropped_rows},
          {"global_test", f.global_test},
          {"clients", clients}};
}

inline Architecture architecture_for(const ExperimentConfig& c, const Federation& f) {
  Architecture a{f.dataset.features.cols, c.hidden_dims};
  a.validate();
  return a;
}

// Uniform selection without replacement; depends only on (seed, round).
inline std::vector<int> select_clients(std::uint64_t seed, std::size_t round, std::size_t n_clients, std::size_t count) {
  std::vector<int> ids(n_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed({seed, stream::kSelect, round}));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(std::min(count, n_clients));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ClientMetrics {
  int client_id = 0;
  std::optional<double> eod;
  std::optional<double> dp_dis;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

struct MeanStd {
  std::optional<double> mean;
  std::optional<double> std;  // population std
  std::size_t excluded = 0;
};

struct RoundMetrics {
  std::size_t round = 0;
  double utility = 0.0;
  std::map<std::string, std::optional<double>> eod, dpd, dp_dis;
  std::vector<ClientMetrics> clients;
  MeanStd local_eod, local_dp_dis, local_accuracy;
  double dis = 0.0;
  std::vector<int> selected;
  std::vector<int> rejected;
  std::vector<ClusterSummary> clusters;
  struct Violation {
    int client_id;
    double max_violation;
    std::size_t best_iteration;
  };
  std::vector<Violation> violations;
};

inline MeanStd mean_std(const std::vector<std::optional<double>>& xs) {
  MeanStd m;
  std::vector<double> v;
  for (const auto& x : xs) {
    if (x)
      v.push_back(*x);
    else
      ++m.excluded;
  }
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  m.mean = mean;
  m.std = std::sqrt(ss / double(v.size()));
  return m;
}

template <typename F>
std::optional<double> defined_or_null(F&& f) {
  try {
    return f();
  } catch (const UndefinedMetricError&) {
    return std::nullopt;
  }
}

// Global metrics on the held-out rows for every sensitive attribute, local
// metrics on every client's test split for the constrained attribute.
inline RoundMetrics evaluate(const DenseNet& net, const Federation& f) {
  RoundMetrics m;
  if (!f.global_test.empty()) {
    auto x = gather_rows(f.dataset.features, f.global_test);
    auto pred = predict(net, x);
    auto labels = gather<int>(f.dataset.labels, f.global_test);
    m.utility = utility(pred, labels);
    for (const auto& attr : f.dataset.sensitive) {
      auto g = gather<int>(attr.groups, f.global_test);
      m.eod[attr.name] = defined_or_null([&] { return eod(pred, labels, g); });
      m.dpd[attr.name] = defined_or_null([&] { return dpd(pred, g); });
      m.dp_dis[attr.name] = defined_or_null([&] { return dp_dis(pred, g); });
    }
  }
  std::vector<std::optional<double>> e, d, a;
  std::vector<double> accuracies;
  for (const auto& c : f.clients) {
    ClientMetrics cm;
    cm.client_id = c.client_id;
    cm.samples = c.test.size();
    if (c.test.size() > 0) {
      auto pred = predict(net, c.test.x);
      cm.accuracy = utility(pred, c.test.labels);
      cm.eod = defined_or_null([&] { return eod(pred, c.test.labels, c.test.groups); });
      cm.dp_dis = defined_or_null([&] { return dp_dis(pred, c.test.groups); });
      accuracies.push_back(cm.accuracy);
      a.push_back(cm.accuracy);
    } else {
      a.push_back(std::nullopt);
    }
    e.push_back(cm.eod);
    d.push_back(cm.dp_dis);
    m.clients.push_back(cm);
  }
  m.local_eod = mean_std(e);
  m.local_dp_dis = mean_std(d);
  m.local_accuracy = mean_std(a);
  m.dis = accuracies.empty() ? 0.0 : discrepancy(accuracies);
  return m;
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const MeanStd& s) {
  return {{"mean", opt_json(s.mean)}, {"std", opt_json(s.std)}, {"excluded", s.excluded}};
}

inline json to_json(const RoundMetrics& m) {
  auto attr_map = [](const std::map<std::string, std::optional<double>>& mp) {
    json j = json::object();
    for (const auto& [k, v] : mp) j[k] = opt_json(v);
    return j;
  };
  json clients = json::array();
  for (const auto& c : m.clients)
    clients.push_back({{"client_id", c.client_id},
                       {"eod", opt_json(c.eod)},
                       {"dp_dis", opt_json(c.dp_dis)},
                       {"accuracy", c.accuracy},
                       {"samples", c.samples}});
  json clusters = json::array();
  for (const auto& c : m.clusters)
    clusters.push_back({{"cluster_id", c.cluster_id},
                        {"members", c.members},
                        {"mean_gini", c.mean_gini},
                        {"data_total", c.data_total},
                        {"weight", c.weight}});
  json viol = json::array();
  for (const auto& v : m.violations)
    viol.push_back({{"client_id", v.client_id}, {"max_violation", v.max_violation}, {"best_iteration", v.best_iteration}});
  return {{"round", m.round},
          {"global", {{"utility", m.utility}, {"eod", attr_map(m.eod)}, {"dpd", attr_map(m.dpd)}, {"dp_dis", attr_map(m.dp_dis)}}},
          {"local",
           {{"clients", clients},
            {"eod", to_json(m.local_eod)},
            {"dp_dis", to_json(m.local_dp_dis)},
            {"accuracy", to_json(m.local_accuracy)}}},
          {"dis", m.dis},
          {"selected", m.selected},
          {"rejected", m.rejected},
          {"clusters", {{"p", m.clusters.size()}, {"members", clusters}}},
          {"violations", viol}};
}

// ---------------------------------------------------------------------------
// The round loop

class RunError : public Error {
 public:
  using Error::Error;
};

struct RunResult {
  DenseNet final_net;
  std::vector<RoundMetrics> rounds;
  std::size_t best_round = 0;  // lowest global EOD on the constrained attribute, earliest on ties
};

namespace detail {

inline std::vector<LocalResult> run_clients(const std::vector<double>& global, const Federation& f,
                                            const std::vector<int>& selected, const ClientConfig& cc,
                                            std::uint64_t seed, std::size_t round, std::size_t workers) {
  std::vector<LocalResult> results(selected.size());
  std::vector<std::exception_ptr> errors(selected.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < selected.size();) {
      try {
        const int id = selected[i];
        results[i] = local_update(global, f.clients[static_cast<std::size_t>(id)], cc, client_round_seed(seed, round, id));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, selected.size()));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw RunError("round " + std::to_string(round) + ", client " + std::to_string(selected[i]) + ": " + e.what());
    }
  }
  return results;
}

inline json trace_json(std::size_t round, const LocalResult& r) {
  json recs = json::array();
  for (const auto& t : r.trace)
    recs.push_back({{"iteration", t.iteration},
                    {"lambda", t.lambda},
                    {"g", t.g.g},
                    {"train_loss", std::isnan(t.train_loss) ? json(nullptr) : json(t.train_loss)},
                    {"val_loss", t.val_loss},
                    {"max_violation", t.max_violation}});
  return {{"round", round}, {"client_id", r.update.client_id}, {"best_iteration", r.best_iteration}, {"trace", recs}};
}

}  // namespace detail

// Runs every round; when out_dir is non-empty writes config.json,
// partition.json, metrics.jsonl, traces.jsonl, final.ckpt,
// final_predictions.csv and summary.json there.
inline RunResult run_experiment(const ExperimentConfig& c, const std::filesystem::path& out_dir = {}) {
  c.validate();
  const Federation f = build_federation(c);
  const Architecture arch = architecture_for(c, f);

  std::ofstream metrics_log, trace_log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << config_to_json(c).dump(2) << "\n";
    std::ofstream(out_dir / "partition.json") << partition_manifest(f).dump() << "\n";
    metrics_log.open(out_dir / "metrics.jsonl", std::ios::trunc);
    trace_log.open(out_dir / "traces.jsonl", std::ios::trunc);
    if (!metrics_log || !trace_log) throw RunError("run: cannot write logs in " + out_dir.string());
  }

  ClientConfig cc{arch, c.constraints, TrainingOptions{c.optimizer, c.batch_size, c.mode == AggregationMode::GLocalFair}};
  DenseNet global = make_net(arch, c.seed);
  RunResult result;
  const std::size_t per_round = c.selected_per_round();
  const std::size_t k_max = c.k_max > 0 ? c.k_max : std::min<std::size_t>(10, per_round);

  for (std::size_t t = 1; t <= c.rounds; ++t) {
    auto selected = select_clients(c.seed, t, c.n_clients, per_round);
    auto local = detail::run_clients(global.params, f, selected, cc, c.seed, t, c.workers);
    std::vector<ClientUpdate> updates;
    for (const auto& r : local) updates.push_back(r.update);

    AggregationResult agg;
    try {
      if (c.mode == AggregationMode::GLocalFair) {
        agg = aggregate(global.params, updates, c.gamma, k_max);
      } else {
        // Cluster diagnostics at gamma = 0 report the weights fedavg applies.
        agg = aggregate(global.params, updates, 0.0, k_max);
        agg.params = fedavg(agg.accepted);
      }
    } catch (const std::exception& e) {
      throw RunError("round " + std::to_string(t) + ", aggregation: " + e.what());
    }
    global.params = std::move(agg.params);

    RoundMetrics m = evaluate(global, f);
    m.round = t;
    m.selected = selected;
    m.rejected = agg.rejected;
    m.clusters = agg.clusters;
    for (const auto& r : local)
      m.violations.push_back({r.update.client_id, r.best_validation.max_violation(), r.best_iteration});
    if (metrics_log.is_open()) {
      metrics_log << to_json(m).dump() << "\n" << std::flush;
      for (const auto& r : local) trace_log << detail::trace_json(t, r).dump() << "\n";
      trace_log.flush();
    }
    result.rounds.push_back(std::move(m));
  }

  result.final_net = global;
  auto key_eod = [&](const RoundMetrics& m) {
    auto it = m.eod.find(f.attribute);
    return it != m.eod.end() && it->second ? *it->second : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 1; i < result.rounds.size(); ++i)
    if (key_eod(result.rounds[i]) < key_eod(result.rounds[result.best_round])) result.best_round = i;

  if (!out_dir.empty()) {
    save_checkpoint(global, out_dir / "final.ckpt");
    std::ofstream pred(out_dir / "final_predictions.csv");
    pred << "row,label";
    for (const auto& a : f.dataset.sensitive) pred << "," << a.name;
    pred << ",prediction\n";
    if (!f.global_test.empty()) {
      auto p = predict(global, gather_rows(f.dataset.features, f.global_test));
      for (std::size_t i = 0; i < f.global_test.size(); ++i) {
        const auto row = f.global_test[i];
        pred << row << "," << f.dataset.labels[row];
        for (const auto& a : f.dataset.sensitive) pred << "," << a.groups[row];
        pred << "," << p[i] << "\n";
      }
    }
    std::ofstream(out_dir / "summary.json")
        << json{{"final_round", result.rounds.back().round},
                {"best_round", result.rounds[result.best_round].round},
                {"best_round_criterion", "lowest global eod on " + f.attribute}}
               .dump(2)
        << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string run;
  std::optional<std::string> error;
  std::map<std::string, std::string> values;
};

struct Report {
  std::vector<std::string> columns;
  std::vector<ReportRow> rows;
  bool ok() const {
    return std::none_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.error.has_value(); });
  }
};

namespace detail {

inline std::string fmt(const json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) {
    std::ostringstream s;
    s << std::setprecision(6) << v.get<double>();
    return s.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace detail

inline Report make_report(std::vector<std::filesystem::path> runs) {
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) {
    return a.filename().string() != b.filename().string() ? a.filename().string() < b.filename().string() : a < b;
  });
  Report rep;
  std::set<std::string> attrs;
  for (const auto& dir : runs) {
    ReportRow row;
    row.run = dir.filename().string();
    if (row.run.empty()) row.run = dir.parent_path().filename().string();
    try {
      std::ifstream ml(dir / "metrics.jsonl");
      if (!ml) throw Error("missing metrics log");
      std::string line, last;
      while (std::getline(ml, line))
        if (!line.empty()) last = line;
      if (last.empty()) throw Error("metrics log is empty");
      const json m = json::parse(last);
      std::ifstream cf(dir / "config.json");
      if (!cf) throw Error("missing config.json");
      const json c = json::parse(cf);
      auto& v = row.values;
      v["mode"] = detail::fmt(c.at("aggregation"));
      v["gamma"] = detail::fmt(c.at("gamma"));
      v["tau_fnr"] = detail::fmt(c.at("constraints").at("tau_fnr"));
      v["tau_fpr"] = detail::fmt(c.at("constraints").at("tau_fpr"));
      v["alpha"] = c.at("partition").at("mode") == "dirichlet" ? detail::fmt(c.at("partition").at("alpha"))
                                                                 : std::string("four-combination");
      v["round"] = detail::fmt(m.at("round"));
      v["utility"] = detail::fmt(m.at("global").at("utility"));
      for (const char* key : {"eod", "dp_dis"})
        for (auto it = m.at("global").at(key).begin(); it != m.at("global").at(key).end(); ++it) {
          attrs.insert(it.key());
          v[std::string(key) + "_" + it.key()] = detail::fmt(it.value());
        }
      v["dis"] = detail::fmt(m.at("dis"));
      v["local_eod_mean"] = detail::fmt(m.at("local").at("eod").at("mean"));
      v["local_eod_std"] = detail::fmt(m.at("local").at("eod").at("std"));
      v["local_dp_dis_mean"] = detail::fmt(m.at("local").at("dp_dis").at("mean"));
      v["local_dp_dis_std"] = detail::fmt(m.at("local").at("dp_dis").at("std"));
    } catch (const std::exception& e) {
      row.error = e.what();
      row.values.clear();
    }
    rep.rows.push_back(std::move(row));
  }
  rep.columns = {"run", "mode", "gamma", "tau_fnr", "tau_fpr", "alpha", "round", "utility"};
  for (const auto& a : attrs) rep.columns.push_back("eod_" + a);
  for (const auto& a : attrs) rep.columns.push_back("dp_dis_" + a);
  for (const char* k : {"dis", "local_eod_mean", "local_eod_std", "local_dp_dis_mean", "local_dp_dis_std", "error"})
    rep.columns.push_back(k);
  return rep;
}

inline std::string report_cell(const ReportRow& r, const std::string& col) {
  if (col == "run") return r.run;
  if (col == "error") return r.error.value_or("");
  auto it = r.values.find(col);
  return it == r.values.end() ? "" : it->second;
}

inline std::string render_csv(const Report& rep) {
  std::ostringstream s;
  for (std::size_t i = 0; i < rep.columns.size(); ++i) s << (i ? "," : "") << rep.columns[i];
  s << "\n";
  for (const auto& r : rep.rows) {
    for (std::size_t i = 0; i < rep.columns.size(); ++i) {
      std::string cell = report_cell(r, rep.columns[i]);
      if (cell.find_first_of(",\"\n") != std::string::npos) {
        std::string q = "\"";
        for (char ch : cell) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        cell = q + "\"";
      }
      s << (i ? "," : "") << cell;
    }
    s << "\n";
  }
  return s.str();
}

inline std::string render_text(const Report& rep) {
  std::vector<std::size_t> width(rep.columns.size());
  for (std::size_t i = 0; i < rep.columns.size(); ++i) {
    width[i] = rep.columns[i].size();
    for (const auto& r : rep.rows) width[i] = std::max(width[i], report_cell(r, rep.columns[i]).size());
  }
  std::ostringstream s;
  auto line = [&](auto cell_of) {
    for (std::size_t i = 0; i < rep.columns.size(); ++i)
      s << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << cell_of(i);
    s << "\n";
  };
  line([&](std::size_t i) { return rep.columns[i]; });
  for (const auto& r : rep.rows) line([&](std::size_t i) { return report_cell(r, rep.columns[i]); });
  return s.str();
}

}  // namespace glf
