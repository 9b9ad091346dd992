#pragma once

// Tabular data: CSV ingestion, a synthetic biased-data generator, client
// partitioning and per-client 70/10/20 splits.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "glf/error.hpp"
#include "glf/nn.hpp"
#include "glf/rng.hpp"

namespace glf {

enum class ColumnKind { Continuous, Categorical, Label, Ignore };

struct FeatureColumn {
  std::string name;         // "age", or "workclass=Private" for one-hot columns
  std::string source;       // CSV column it came from
  ColumnKind kind = ColumnKind::Continuous;
  double mean = 0.0;        // standardisation statistics (continuous only)
  double scale = 1.0;
};

struct SensitiveAttribute {
  std::string name;
  std::vector<int> groups;  // 0/1 per sample
};

struct TabularDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<SensitiveAttribute> sensitive;
  std::vector<FeatureColumn> columns;
  std::size_t dropped_rows = 0;

  std::size_t size() const { return labels.size(); }

  const std::vector<int>& groups(const std::string& attribute) const {
    for (const auto& s : sensitive)
      if (s.name == attribute) return s.groups;
    throw ConfigError("dataset has no sensitive attribute '" + attribute + "'");
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
};

struct SensitiveSpec {
  std::string name;                         // attribute name, e.g. "gender"
  std::string column;                       // source column, e.g. "sex"
  std::vector<std::string> group1_values;   // values mapped to group 1
};

struct CsvSchema {
  std::vector<ColumnSpec> columns;          // every column of the header, in any order
  std::string label_column;
  std::vector<std::string> positive_labels;
  std::vector<SensitiveSpec> sensitive;
  std::string missing_marker = "?";
};

inline CsvSchema adult_schema() {
  using K = ColumnKind;
  CsvSchema s;
  s.columns = {{"age", K::Continuous},          {"workclass", K::Categorical},    {"fnlwgt", K::Continuous},
               {"education", K::Categorical},   {"education-num", K::Continuous}, {"marital-status", K::Categorical},
               {"occupation", K::Categorical},  {"relationship", K::Categorical}, {"race", K::Categorical},
               {"sex", K::Categorical},         {"capital-gain", K::Continuous},  {"capital-loss", K::Continuous},
               {"hours-per-week", K::Continuous}, {"native-country", K::Categorical}, {"income", K::Label}};
  s.label_column = "income";
  s.positive_labels = {">50K", ">50K."};
  s.sensitive = {{"gender", "sex", {"Male"}}, {"race", "race", {"White"}}};
  return s;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_number(const std::string& s, std::size_t line_no, const std::string& column) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw IngestError(IngestErrorKind::UnparseableNumeric,
                      "line " + std::to_string(line_no) + ": column '" + column + "' value '" + s + "' is not a number");
  return v;
}

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

// Parses comma-separated text with a header row. Rows holding the missing
// marker in any column are dropped and counted. Continuous columns are
// z-standardised (population statistics over the kept rows); categoricals are
// one-hot encoded with categories in lexicographic order.
inline TabularDataset parse_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw IngestError(IngestErrorKind::EmptyFile, "csv: empty input");
  ++line_no;
  const auto header = detail::split_csv_line(line);

  std::map<std::string, ColumnKind> declared;
  for (const auto& c : schema.columns) declared[c.name] = c.kind;
  for (const auto& h : header)
    if (!declared.count(h)) throw IngestError(IngestErrorKind::UnknownColumn, "csv: column '" + h + "' is not in the schema");
  auto column_index = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestError(IngestErrorKind::UnknownColumn, "csv: schema column '" + name + "' missing from header");
    return static_cast<std::size_t>(it - header.begin());
  };
  for (const auto& c : schema.columns) column_index(c.name);
  const std::size_t label_idx = column_index(schema.label_column);
  std::vector<std::size_t> sensitive_idx;
  for (const auto& s : schema.sensitive) sensitive_idx.push_back(column_index(s.column));

  std::vector<std::vector<std::string>> rows;
  std::size_t dropped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw IngestError(IngestErrorKind::BadRow, "csv: line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                                                     " fields, header has " + std::to_string(header.size()));
    if (std::find(f.begin(), f.end(), schema.missing_marker) != f.end()) {
      ++dropped;
      continue;
    }
    // Validate numerics eagerly so the error carries the line number.
    for (std::size_t c = 0; c < header.size(); ++c)
      if (declared[header[c]] == ColumnKind::Continuous) detail::parse_number(f[c], line_no, header[c]);
    rows.push_back(std::move(f));
  }
  if (rows.empty()) throw IngestError(IngestErrorKind::EmptyFile, "csv: no usable data rows");

  TabularDataset ds;
  ds.dropped_rows = dropped;
  const std::size_t n = rows.size();

  struct Block {
    std::size_t csv_col;
    ColumnKind kind;
    std::vector<std::string> categories;
  };
  std::vector<Block> blocks;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto kind = declared[header[c]];
    if (kind == ColumnKind::Continuous) {
      blocks.push_back({c, kind, {}});
    } else if (kind == ColumnKind::Categorical) {
      std::set<std::string> cats;
      for (const auto& r : rows) cats.insert(r[c]);
      blocks.push_back({c, kind, {cats.begin(), cats.end()}});
    }
  }
  std::size_t width = 0;
  for (const auto& b : blocks) width += b.kind == ColumnKind::Continuous ? 1 : b.categories.size();
  ds.features = Matrix(n, width);

  std::size_t col = 0;
  for (const auto& b : blocks) {
    const std::string& name = header[b.csv_col];
    if (b.kind == ColumnKind::Continuous) {
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = detail::parse_number(rows[i][b.csv_col], 0, name);
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= double(n);
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= double(n);
      const double scale = var > 0.0 ? std::sqrt(var) : 1.0;
      for (std::size_t i = 0; i < n; ++i) ds.features(i, col) = (v[i] - mean) / scale;
      ds.columns.push_back({name, name, ColumnKind::Continuous, mean, scale});
      ++col;
    } else {
      for (const auto& cat : b.categories) {
        for (std::size_t i = 0; i < n; ++i) ds.features(i, col) = rows[i][b.csv_col] == cat ? 1.0 : 0.0;
        ds.columns.push_back({name + "=" + cat, name, ColumnKind::Categorical, 0.0, 1.0});
        ++col;
      }
    }
  }

  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = detail::contains(schema.positive_labels, rows[i][label_idx]) ? 1 : 0;
  for (std::size_t s = 0; s < schema.sensitive.size(); ++s) {
    SensitiveAttribute attr{schema.sensitive[s].name, std::vector<int>(n)};
    std::array<std::size_t, 2> seen{};
    for (std::size_t i = 0; i < n; ++i) {
      attr.groups[i] = detail::contains(schema.sensitive[s].group1_values, rows[i][sensitive_idx[s]]) ? 1 : 0;
      ++seen[attr.groups[i]];
    }
    if (seen[0] == 0 || seen[1] == 0)
      throw IngestError(IngestErrorKind::MissingGroup, "csv: sensitive attribute '" + attr.name + "' has an empty group");
    ds.sensitive.push_back(std::move(attr));
  }
  return ds;
}

inline TabularDataset load_adult_csv(const std::filesystem::path& path, const CsvSchema& schema = adult_schema()) {
  std::ifstream f(path);
  if (!f) throw IngestError(IngestErrorKind::Io, "csv: cannot open " + path.string());
  return parse_csv(f, schema);
}

// ---------------------------------------------------------------------------
// Synthetic biased data

// Samples of group g with label y draw every signal feature from
//   N(+-separation/2 + shift[g][y], noise^2)
// (plus for y = 1, minus for y = 0), every distractor feature from
// N(0, noise^2), and optionally carry the group id as an extra feature.
struct SynthSpec {
  std::array<std::size_t, 2> group_sizes{5000, 5000};
  std::array<double, 2> positive_rates{0.5, 0.5};
  std::array<double, 2> positive_shift{0.0, 0.0};  // per group, added to positives' signal mean
  std::array<double, 2> negative_shift{0.0, 0.0};  // per group, added to negatives' signal mean
  double separation = 2.0;
  std::size_t signal_features = 2;
  std::size_t distractor_features = 2;
  double noise = 1.0;
  bool group_feature = true;
  std::string attribute = "group";
};

inline TabularDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.group_sizes[0] + spec.group_sizes[1] == 0) throw ConfigError("synthetic: no samples requested");
  for (double r : spec.positive_rates)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("synthetic: positive rates must lie in [0, 1]");
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic: noise scale must be nonnegative");
  if (spec.signal_features == 0) throw ConfigError("synthetic: at least one signal feature required");

  Rng rng(derive_seed({seed, stream::kSynth}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = spec.group_sizes[0] + spec.group_sizes[1];
  const std::size_t d = spec.signal_features + spec.distractor_features + (spec.group_feature ? 1 : 0);

  // Shuffle sample order so groups are interleaved.
  std::vector<int> group_of(n);
  std::fill(group_of.begin() + static_cast<std::ptrdiff_t>(spec.group_sizes[0]), group_of.end(), 1);
  std::shuffle(group_of.begin(), group_of.end(), rng);

  TabularDataset ds;
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  SensitiveAttribute attr{spec.attribute, group_of};
  for (std::size_t i = 0; i < n; ++i) {
    const int g = group_of[i];
    std::bernoulli_distribution coin(spec.positive_rates[g]);
    const int y = coin(rng) ? 1 : 0;
    ds.labels[i] = y;
    const double mean = (y ? 0.5 : -0.5) * spec.separation + (y ? spec.positive_shift[g] : spec.negative_shift[g]);
    std::size_t c = 0;
    for (std::size_t k = 0; k < spec.signal_features; ++k) ds.features(i, c++) = mean + spec.noise * normal(rng);
    for (std::size_t k = 0; k < spec.distractor_features; ++k) ds.features(i, c++) = spec.noise * normal(rng);
    if (spec.group_feature) ds.features(i, c++) = static_cast<double>(g);
  }
  for (std::size_t k = 0; k < spec.signal_features; ++k) ds.columns.push_back({"signal" + std::to_string(k), "synthetic"});
  for (std::size_t k = 0; k < spec.distractor_features; ++k) ds.columns.push_back({"distractor" + std::to_string(k), "synthetic"});
  if (spec.group_feature) ds.columns.push_back({spec.attribute, "synthetic", ColumnKind::Categorical});
  ds.sensitive.push_back(std::move(attr));
  return ds;
}

// ---------------------------------------------------------------------------
// Partitioning

struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;  // rows of the dataset held by this client
  std::vector<std::size_t> train, validation, test;
};

enum class PartitionMode { Dirichlet, FourCombination };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::Dirichlet;
  double alpha = 10.0;
  std::size_t min_samples = 20;
};

// Joint cell of all sensitive attributes: Sum_a 2^a * group_a.
inline std::size_t sensitive_cell(const TabularDataset& ds, std::size_t row) {
  std::size_t cell = 0;
  for (std::size_t a = 0; a < ds.sensitive.size(); ++a) cell |= std::size_t(ds.sensitive[a].groups[row]) << a;
  return cell;
}

namespace detail {

// Integer counts summing to total, as close to weights * total as largest
// remainders allow; ties go to the lower index.
inline std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  if (wsum <= 0.0 || total == 0) return out;
  std::vector<double> frac(weights.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / wsum * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    used += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++out[order[k % order.size()]];
  return out;
}

inline std::vector<double> dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> q(k);
  double s = 0.0;
  for (auto& x : q) s += (x = gamma(rng));
  if (s > 0.0) {
    for (auto& x : q) x /= s;
  } else {
    // every draw underflowed (tiny alpha): put all mass on one cell
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::fill(q.begin(), q.end(), 0.0);
    q[pick(rng)] = 1.0;
  }
  return q;
}

}  // namespace detail

// Splits `pool` (row indices of ds) among clients.
//
// Dirichlet mode: every client gets an equal share of the pool (+-1) and a
// sensitive-cell proportion vector q_k ~ Dir(alpha); cells are handed out to
// match q_k as closely as integer counts and cell supplies allow.
// Four-combination mode: exactly four clients, one per (attribute 0, attribute 1) cell.
inline std::vector<ClientShard> partition(const TabularDataset& ds, std::span<const std::size_t> pool,
                                          std::size_t n_clients, const PartitionSpec& spec, std::uint64_t seed) {
  if (n_clients == 0) throw ConfigError("partition: n_clients must be at least 1");
  if (pool.empty()) throw ConfigError("partition: dataset is empty");
  Rng rng(derive_seed({seed, stream::kPartition}));

  std::size_t n_cells = std::size_t{1} << ds.sensitive.size();
  std::vector<std::vector<std::size_t>> cells(n_cells);
  for (auto i : pool) cells[sensitive_cell(ds, i)].push_back(i);

  std::vector<ClientShard> shards(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) shards[k].client_id = static_cast<int>(k);

  if (spec.mode == PartitionMode::FourCombination) {
    if (ds.sensitive.size() != 2 || n_clients != 4)
      throw ConfigError("partition: four-combination mode needs exactly 2 sensitive attributes and 4 clients");
    for (std::size_t c = 0; c < 4; ++c) {
      if (cells[c].size() < spec.min_samples)
        throw InfeasiblePartitionError("partition: cell " + std::to_string(c) + " holds fewer than the minimum samples");
      shards[c].indices = cells[c];
    }
    return shards;
  }

  if (!(spec.alpha > 0.0)) throw ConfigError("partition: alpha must be positive");
  if (n_clients * spec.min_samples > pool.size())
    throw InfeasiblePartitionError("partition: " + std::to_string(n_clients) + " clients x " +
                                   std::to_string(spec.min_samples) + " samples exceeds the " +
                                   std::to_string(pool.size()) + " available");

  std::vector<std::size_t> live;  // non-empty cells
  for (std::size_t c = 0; c < n_cells; ++c)
    if (!cells[c].empty()) live.push_back(c);
  for (auto& c : cells) std::shuffle(c.begin(), c.end(), rng);

  const auto sizes = detail::apportion(std::vector<double>(n_clients, 1.0), pool.size());
  std::vector<std::vector<double>> q(n_clients);
  std::vector<std::vector<std::size_t>> alloc(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    q[k] = detail::dirichlet(live.size(), spec.alpha, rng);
    alloc[k] = detail::apportion(q[k], sizes[k]);
  }
  // Scale down over-subscribed cells.
  for (std::size_t c = 0; c < live.size(); ++c) {
    const std::size_t supply = cells[live[c]].size();
    std::size_t demand = 0;
    for (std::size_t k = 0; k < n_clients; ++k) demand += alloc[k][c];
    if (demand <= supply) continue;
    std::vector<double> w(n_clients);
    for (std::size_t k = 0; k < n_clients; ++k) w[k] = static_cast<double>(alloc[k][c]);
    auto capped = detail::apportion(w, supply);
    for (std::size_t k = 0; k < n_clients; ++k) alloc[k][c] = std::min(alloc[k][c], capped[k]);
  }
  // Fill shortfalls from the cells each client prefers most.
  std::vector<std::size_t> remaining(live.size());
  for (std::size_t c = 0; c < live.size(); ++c) {
    std::size_t taken = 0;
    for (std::size_t k = 0; k < n_clients; ++k) taken += alloc[k][c];
    remaining[c] = cells[live[c]].size() - taken;
  }
  for (std::size_t k = 0; k < n_clients; ++k) {
    std::size_t have = std::accumulate(alloc[k].begin(), alloc[k].end(), std::size_t{0});
    while (have < sizes[k]) {
      std::size_t best = live.size();
      for (std::size_t c = 0; c < live.size(); ++c)
        if (remaining[c] > 0 && (best == live.size() || q[k][c] > q[k][best])) best = c;
      const std::size_t take = std::min(remaining[best], sizes[k] - have);
      alloc[k][best] += take;
      remaining[best] -= take;
      have += take;
    }
  }
  std::vector<std::size_t> cursor(live.size(), 0);
  for (std::size_t k = 0; k < n_clients; ++k) {
    for (std::size_t c = 0; c < live.size(); ++c) {
      const auto& src = cells[live[c]];
      shards[k].indices.insert(shards[k].indices.end(), src.begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                               src.begin() + static_cast<std::ptrdiff_t>(cursor[c] + alloc[k][c]));
      cursor[c] += alloc[k][c];
    }
    std::sort(shards[k].indices.begin(), shards[k].indices.end());
  }
  return shards;
}

// Shuffle by seed, then 70/10/20 by floor with the remainder given out by
// largest fractional part (ties: train, validation, test).
inline void split_70_10_20(ClientShard& shard, std::uint64_t seed) {
  std::vector<std::size_t> order = shard.indices;
  Rng rng(derive_seed({seed, stream::kSplit, static_cast<std::uint64_t>(shard.client_id)}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto counts = detail::apportion({0.7, 0.1, 0.2}, order.size());
  if (counts[0] == 0 || counts[1] == 0)
    throw InfeasiblePartitionError("split: client " + std::to_string(shard.client_id) + " with " +
                                   std::to_string(order.size()) + " samples cannot have non-empty train and validation splits");
  auto it = order.begin();
  shard.train.assign(it, it + static_cast<std::ptrdiff_t>(counts[0]));
  it += static_cast<std::ptrdiff_t>(counts[0]);
  shard.validation.assign(it, it + static_cast<std::ptrdiff_t>(counts[1]));
  it += static_cast<std::ptrdiff_t>(counts[1]);
  shard.test.assign(it, order.end());
}

// Seeded random split of all rows into (pool, held-out test).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> hold_out(std::size_t n, double test_fraction,
                                                                              std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("hold_out: test fraction must lie in [0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed({seed, stream::kGlobalTest}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(pool.begin(), pool.end());
  return {pool, test};
}

}  // namespace glf
