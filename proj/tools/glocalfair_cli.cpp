// Command-line front end: run, partition, metrics, gini, report.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "glf/checkpoint.hpp"
#include "glf/data.hpp"
#include "glf/experiment.hpp"
#include "glf/server.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out,
            std::optional<std::size_t> workers) {
  auto cfg = glf::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.output_dir = out;
  if (workers) cfg.workers = *workers;
  auto r = glf::run_experiment(cfg, cfg.output_dir);
  const auto& last = r.rounds.back();
  std::cout << "run complete: " << cfg.output_dir.string() << "\n"
            << "final round " << last.round << ": utility " << last.utility;
  for (const auto& [attr, v] : last.eod) std::cout << ", eod[" << attr << "] " << (v ? std::to_string(*v) : "undefined");
  std::cout << "\n";
  return kOk;
}

int cmd_partition(const std::string& config_path, const std::string& manifest) {
  auto cfg = glf::load_config(config_path);
  auto fed = glf::build_federation(cfg);
  std::ofstream f(manifest);
  if (!f) throw glf::Error("cannot write " + manifest);
  f << glf::partition_manifest(fed).dump() << "\n";
  for (const auto& s : fed.shards)
    std::cout << "client " << s.client_id << ": " << s.indices.size() << " rows (train " << s.train.size() << ", validation "
              << s.validation.size() << ", test " << s.test.size() << ")\n";
  std::cout << "global test: " << fed.global_test.size() << " rows\n";
  return kOk;
}

int cmd_metrics(const std::string& checkpoint, const std::string& data) {
  auto net = glf::load_checkpoint(checkpoint);
  if (fs::path(data).extension() == ".json") {
    // Rebuild the experiment's federation and evaluate as the round loop does.
    auto cfg = glf::load_config(data);
    auto fed = glf::build_federation(cfg);
    if (net.arch != glf::architecture_for(cfg, fed))
      throw glf::ConfigError("checkpoint architecture does not match the configured dataset");
    std::cout << glf::to_json(glf::evaluate(net, fed)).dump(2) << "\n";
    return kOk;
  }
  auto ds = glf::load_adult_csv(data);
  if (net.arch.input_dim != ds.features.cols)
    throw glf::ConfigError("checkpoint expects " + std::to_string(net.arch.input_dim) + " features, data has " +
                           std::to_string(ds.features.cols));
  auto pred = glf::predict(net, ds.features);
  glf::json out = {{"rows", ds.size()}, {"dropped_rows", ds.dropped_rows}, {"utility", glf::utility(pred, ds.labels)}};
  for (const auto& a : ds.sensitive) {
    out["eod"][a.name] = glf::opt_json(glf::defined_or_null([&] { return glf::eod(pred, ds.labels, a.groups); }));
    out["dpd"][a.name] = glf::opt_json(glf::defined_or_null([&] { return glf::dpd(pred, a.groups); }));
    out["dp_dis"][a.name] = glf::opt_json(glf::defined_or_null([&] { return glf::dp_dis(pred, a.groups); }));
  }
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int cmd_gini(const std::string& checkpoint, const std::string& lorenz) {
  auto net = glf::load_checkpoint(checkpoint);
  auto g = glf::gini_coefficient(net.params);
  std::cout << std::setprecision(17) << "gini " << g.value << (g.degenerate ? " (all parameters zero)" : "") << "\n";
  if (!lorenz.empty()) {
    std::ofstream f(lorenz);
    if (!f) throw glf::Error("cannot write " + lorenz);
    f << std::setprecision(17) << "population_fraction,weight_fraction\n";
    for (const auto& p : glf::lorenz_points(net.params)) f << p.population_fraction << "," << p.weight_fraction << "\n";
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& format) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  auto rep = glf::make_report(dirs);
  std::cout << (format == "csv" ? glf::render_csv(rep) : glf::render_text(rep));
  return rep.ok() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with local constraints and Gini-weighted aggregation"};
  app.require_subcommand(1);

  std::string config, out, manifest, checkpoint, data, lorenz, format = "text";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::vector<std::string> runs;

  auto* run = app.add_subcommand("run", "Run a federated experiment");
  run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the global seed");
  run->add_option("--out", out, "Override the output directory");
  run->add_option("--workers", workers, "Client-update worker threads")->check(CLI::PositiveNumber);

  auto* part = app.add_subcommand("partition", "Write the client partition manifest");
  part->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  part->add_option("--manifest", manifest, "Output manifest path")->required();

  auto* met = app.add_subcommand("metrics", "Evaluate a checkpoint");
  met->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  met->add_option("--data", data, "Experiment config (.json) or Adult-format CSV")->required()->check(CLI::ExistingFile);

  auto* gin = app.add_subcommand("gini", "Gini coefficient of a checkpoint's parameters");
  gin->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  gin->add_option("--lorenz", lorenz, "Write the Lorenz curve as CSV");

  auto* rep = app.add_subcommand("report", "Compare final-round metrics of runs");
  rep->add_option("--runs", runs, "Run directories")->required();
  rep->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "text"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config, seed, out, workers);
    if (*part) return cmd_partition(config, manifest);
    if (*met) return cmd_metrics(checkpoint, data);
    if (*gin) return cmd_gini(checkpoint, lorenz);
    if (*rep) return cmd_report(runs, format);
  } catch (const glf::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const glf::InfeasiblePartitionError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
