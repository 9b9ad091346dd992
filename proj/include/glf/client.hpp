#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "glf/constraints.hpp"
#include "glf/error.hpp"
#include "glf/nn.hpp"
#include "glf/rng.hpp"

namespace glf {

struct ClientUpdate {
  int client_id = 0;
  std::vector<double> params;
  std::size_t sample_count = 0;  // d_k: training samples used this round
  double gini = std::numeric_limits<double>::quiet_NaN();  // filled in by the server
};

// Everything one client may see: its own splits and nothing else.
struct ClientData {
  int client_id = 0;
  Split train;
  Split validation;
  Split test;
};

struct ClientConfig {
  Architecture arch;
  ConstraintSpec constraints;
  TrainingOptions training;
};

struct LocalResult {
  ClientUpdate update;
  std::vector<TraceRecord> trace;
  std::size_t best_iteration = 0;
  ConstraintValues best_validation;  // exact constraints of the returned iterate
};

inline std::uint64_t client_round_seed(std::uint64_t global_seed, std::uint64_t round, int client_id) {
  return derive_seed({global_seed, stream::kClient, round, static_cast<std::uint64_t>(client_id)});
}

inline LocalResult local_update(std::span<const double> global_params, const ClientData& shard,
                                const ClientConfig& config, std::uint64_t round_seed) {
  if (global_params.size() != config.arch.param_count())
    throw ShapeError("local_update: global parameters do not match the architecture");
  if (shard.train.size() == 0 || shard.validation.size() == 0)
    throw ConfigError("local_update: client " + std::to_string(shard.client_id) + " has an empty split");

  DenseNet net{config.arch, {global_params.begin(), global_params.end()}, 0};
  auto trained = run_constrained_training(net, shard.train, shard.validation, config.constraints, config.training,
                                          round_seed);
  if (!all_finite(trained.best.params))
    throw NumericError("local_update: client " + std::to_string(shard.client_id) + " produced non-finite parameters");

  LocalResult r;
  r.update.client_id = shard.client_id;
  r.update.params = std::move(trained.best.params);
  r.update.sample_count = shard.train.size();
  r.best_iteration = trained.best_iteration;
  r.best_validation = trained.trace[trained.best_iteration].g;
  r.trace = std::move(trained.trace);
  return r;
}

}  // namespace glf
