#pragma once

// Local fairness constraints and the two-player solver run on each client.
//
// Four constraints bound how far group FNR/FPR may drift from the overall rate:
//   g1 = max_g FNR_g - FNR_overall - tau_fnr
//   g2 = FNR_overall - min_g FNR_g - tau_fnr
//   g3 = max_g FPR_g - FPR_overall - tau_fpr
//   g4 = FPR_overall - min_g FPR_g - tau_fpr
// A positive value is the violation magnitude.
//
// The model player descends on BCE + sum_i lambda_i * ghat_i using smooth
// surrogate rates on minibatches. The dual player ascends on the exact
// (indicator) constraint values measured on the validation split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glf/error.hpp"
#include "glf/metrics.hpp"
#include "glf/nn.hpp"
#include "glf/rng.hpp"

namespace glf {

inline constexpr std::size_t kNumConstraints = 4;
using ConstraintVector = std::array<double, kNumConstraints>;

enum class SurrogateKind { Sigmoid, Hinge };

// Bounds enabling the theoretical step sizes:
//   eta_theta  = B_theta / (B_grad * sqrt(2T))
//   eta_lambda = sqrt((m+1) ln(m+1) / (T * B_dual^2))
struct StepBounds {
  double theta_norm = 1.0;  // B_Theta
  double grad_norm = 1.0;   // B_hat-Delta
  double dual_grad = 1.0;   // B_Delta
};

struct ConstraintSpec {
  double tau_fnr = 0.1;
  double tau_fpr = 0.08;
  SurrogateKind surrogate = SurrogateKind::Sigmoid;
  double temperature = 5.0;
  double lambda_lr = 0.05;
  double lambda_radius = 10.0;
  std::size_t iterations = 100;     // J
  std::size_t warmup_epochs = 1;    // E
  std::optional<StepBounds> schedule;

  void validate() const {
    if (!(tau_fnr >= 0.0 && tau_fnr <= 1.0) || !(tau_fpr >= 0.0 && tau_fpr <= 1.0))
      throw ConfigError("constraints: tau values must lie in [0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("constraints: temperature must be positive");
    if (!(lambda_lr > 0.0)) throw ConfigError("constraints: lambda learning rate must be positive");
    if (!(lambda_radius > 0.0)) throw ConfigError("constraints: lambda radius must be positive");
    if (schedule && (!(schedule->theta_norm > 0.0) || !(schedule->grad_norm > 0.0) || !(schedule->dual_grad > 0.0)))
      throw ConfigError("constraints: step-size bounds must be positive");
  }
};

struct StepSizes {
  double theta;
  double lambda;
};

inline StepSizes theoretical_step_sizes(const StepBounds& b, std::size_t horizon) {
  if (horizon == 0) throw ConfigError("step schedule: horizon must be positive");
  const double t = static_cast<double>(horizon);
  const double m1 = static_cast<double>(kNumConstraints + 1);
  return {b.theta_norm / (b.grad_norm * std::sqrt(2.0 * t)),
          std::sqrt(m1 * std::log(m1) / (t * b.dual_grad * b.dual_grad))};
}

struct DualState {
  ConstraintVector lambda{};
};

struct ConstraintValues {
  ConstraintVector g{};
  std::array<bool, kNumConstraints> active{};

  // max_i max(0, g_i) over active constraints.
  double max_violation() const {
    double v = 0.0;
    for (std::size_t i = 0; i < kNumConstraints; ++i)
      if (active[i]) v = std::max(v, g[i]);
    return v;
  }
  int inactive_count() const {
    return static_cast<int>(std::count(active.begin(), active.end(), false));
  }
};

namespace detail {

// Max and min over defined group rates; ties go to the lower group index.
struct Extremes {
  int argmax = -1;
  int argmin = -1;
};

inline Extremes extremes(const std::array<std::optional<double>, 2>& rates) {
  Extremes e;
  for (int g = 0; g < 2; ++g) {
    if (!rates[g]) continue;
    if (e.argmax < 0 || *rates[g] > *rates[e.argmax]) e.argmax = g;
    if (e.argmin < 0 || *rates[g] < *rates[e.argmin]) e.argmin = g;
  }
  return e;
}

}  // namespace detail

// Exact constraint values. A pair of constraints whose rates are undefined
// (no group rate or no overall rate) is reported inactive with value 0.
inline ConstraintValues constraint_values(const GroupRates& r, const ConstraintSpec& spec) {
  ConstraintValues cv;
  auto fill = [&](std::size_t base, const std::array<std::optional<double>, 2>& groups,
                  const std::optional<double>& overall, double tau) {
    auto e = detail::extremes(groups);
    if (e.argmax < 0 || !overall) return;
    cv.g[base] = *groups[e.argmax] - *overall - tau;
    cv.g[base + 1] = *overall - *groups[e.argmin] - tau;
    cv.active[base] = cv.active[base + 1] = true;
  };
  fill(0, {r.group[0].fnr, r.group[1].fnr}, r.overall.fnr, spec.tau_fnr);
  fill(2, {r.group[0].fpr, r.group[1].fpr}, r.overall.fpr, spec.tau_fpr);
  return cv;
}

// A smooth rate and its derivative w.r.t. every logit of the batch.
struct SurrogateRate {
  std::optional<double> value;
  std::vector<double> dlogit;
};

struct SurrogateRates {
  std::array<SurrogateRate, 2> fnr;
  std::array<SurrogateRate, 2> fpr;
  SurrogateRate fnr_overall;
  SurrogateRate fpr_overall;
};

namespace detail {

// Smooth stand-in for the false-negative indicator [z < 0] as a function of
// t = kappa * z, with derivative d/dt. False positives use the mirror image.
inline std::pair<double, double> smooth_miss(SurrogateKind kind, double t) {
  if (kind == SurrogateKind::Sigmoid) {
    const double s = logistic(-t);
    return {s, -s * (1.0 - s)};
  }
  // Ramp max(0, 1 - t) clipped at 1; dominates [t < 0].
  if (t <= 0.0) return {1.0, 0.0};
  if (t >= 1.0) return {0.0, 0.0};
  return {1.0 - t, -1.0};
}

}  // namespace detail

inline SurrogateRates surrogate_rates_from_logits(std::span<const double> logits, std::span<const int> labels,
                                                  std::span<const int> groups, double temperature,
                                                  SurrogateKind kind) {
  const std::size_t n = logits.size();
  if (labels.size() != n || groups.size() != n) throw ShapeError("surrogate_rates: length mismatch");
  for (double z : logits)
    if (!std::isfinite(z)) throw NumericError("surrogate_rates: non-finite logit");

  SurrogateRates out;
  auto init = [n](SurrogateRate& r) { r.dlogit.assign(n, 0.0); };
  for (auto& r : out.fnr) init(r);
  for (auto& r : out.fpr) init(r);
  init(out.fnr_overall);
  init(out.fpr_overall);

  std::array<std::size_t, 2> npos{}, nneg{};
  for (std::size_t i = 0; i < n; ++i) (labels[i] ? npos : nneg)[groups[i]]++;
  const std::size_t pos_all = npos[0] + npos[1];
  const std::size_t neg_all = nneg[0] + nneg[1];

  std::array<double, 2> sum_fn{}, sum_fp{};
  double all_fn = 0.0, all_fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int g = groups[i];
    const double kz = temperature * logits[i];
    if (labels[i]) {
      auto [v, d] = detail::smooth_miss(kind, kz);
      sum_fn[g] += v;
      all_fn += v;
      out.fnr[g].dlogit[i] = d * temperature / double(npos[g]);
      out.fnr_overall.dlogit[i] = d * temperature / double(pos_all);
    } else {
      // false positive: [z >= 0] ~ smooth_miss(-kz)
      auto [v, d] = detail::smooth_miss(kind, -kz);
      sum_fp[g] += v;
      all_fp += v;
      out.fpr[g].dlogit[i] = -d * temperature / double(nneg[g]);
      out.fpr_overall.dlogit[i] = -d * temperature / double(neg_all);
    }
  }
  for (int g = 0; g < 2; ++g) {
    if (npos[g]) out.fnr[g].value = sum_fn[g] / double(npos[g]);
    if (nneg[g]) out.fpr[g].value = sum_fp[g] / double(nneg[g]);
  }
  if (pos_all) out.fnr_overall.value = all_fn / double(pos_all);
  if (neg_all) out.fpr_overall.value = all_fp / double(neg_all);
  return out;
}

inline SurrogateRates surrogate_rates(const DenseNet& net, const Matrix& x, std::span<const int> labels,
                                      std::span<const int> groups, double temperature, SurrogateKind kind) {
  auto f = forward(net, x);
  return surrogate_rates_from_logits(f.logits, labels, groups, temperature, kind);
}

// A minibatch drawn from one client's training split.
struct Batch {
  Matrix x;
  std::vector<int> labels;
  std::vector<int> groups;
};

namespace detail {

inline std::vector<double> bce_logit_grad(std::span<const double> probabilities, std::span<const int> labels) {
  const double n = static_cast<double>(labels.size());
  std::vector<double> g(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) g[i] = 1.0 * (probabilities[i] - labels[i]) / n;
  return g;
}

// d/dlogit of sum_i lambda_i * ghat_i, with the max/min groups chosen by the
// exact rates realised on the batch.
inline void add_constraint_grad(std::vector<double>& logit_grad, const SurrogateRates& s, const GroupRates& exact,
                                const DualState& dual) {
  auto apply = [&](std::size_t base, const std::array<SurrogateRate, 2>& grp, const SurrogateRate& overall,
                   const std::array<std::optional<double>, 2>& exact_rates) {
    auto e = extremes(exact_rates);
    if (e.argmax < 0 || !overall.value) return;
    const double l_hi = dual.lambda[base];
    const double l_lo = dual.lambda[base + 1];
    // ghat_hi = rate_max - rate_overall ; ghat_lo = rate_overall - rate_min
    if (l_hi != 0.0)
      for (std::size_t i = 0; i < logit_grad.size(); ++i)
        logit_grad[i] += l_hi * (grp[e.argmax].dlogit[i] - overall.dlogit[i]);
    if (l_lo != 0.0)
      for (std::size_t i = 0; i < logit_grad.size(); ++i)
        logit_grad[i] += l_lo * (overall.dlogit[i] - grp[e.argmin].dlogit[i]);
  };
  apply(0, s.fnr, s.fnr_overall, {exact.group[0].fnr, exact.group[1].fnr});
  apply(2, s.fpr, s.fpr_overall, {exact.group[0].fpr, exact.group[1].fpr});
}

inline std::vector<int> threshold(std::span<const double> logits) {
  std::vector<int> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = logits[i] >= 0.0 ? 1 : 0;
  return p;
}

}  // namespace detail

// One model-player step on BCE + sum_i lambda_i * ghat_i. Returns batch BCE
// measured before the step.
inline double theta_step(DenseNet& net, const Batch& batch, const DualState& dual, const ConstraintSpec& spec,
                         OptimizerState& opt) {
  auto f = forward(net, batch.x);
  auto logit_grad = detail::bce_logit_grad(f.probabilities, batch.labels);
  const bool any_dual = std::any_of(dual.lambda.begin(), dual.lambda.end(), [](double l) { return l != 0.0; });
  if (any_dual) {
    auto s = surrogate_rates_from_logits(f.logits, batch.labels, batch.groups, spec.temperature, spec.surrogate);
    auto exact = group_rates(detail::threshold(f.logits), batch.labels, batch.groups);
    detail::add_constraint_grad(logit_grad, s, exact, dual);
  }
  auto grad = backprop(net, batch.x, logit_grad);
  opt_step(net.params, grad, opt);
  return bce_loss(f.probabilities, batch.labels);
}

// lambda <- lambda + eta * g, clamped at zero, then scaled back into the
// l1 ball of the given radius.
inline DualState lambda_step(const DualState& dual, const ConstraintVector& g, double eta, double radius) {
  DualState next;
  double l1 = 0.0;
  for (std::size_t i = 0; i < kNumConstraints; ++i) {
    next.lambda[i] = std::max(0.0, dual.lambda[i] + eta * g[i]);
    l1 += next.lambda[i];
  }
  if (l1 > radius) {
    const double scale = radius / l1;
    for (auto& l : next.lambda) l *= scale;
  }
  return next;
}

struct Split {
  Matrix x;
  std::vector<int> labels;
  std::vector<int> groups;  // the constrained sensitive attribute

  std::size_t size() const { return labels.size(); }
};

struct TraceRecord {
  std::size_t iteration = 0;  // 0 = after warmup, before any game step
  ConstraintVector lambda{};  // dual after this iteration's update
  ConstraintValues g;         // exact, on validation
  double train_loss = 0.0;    // minibatch BCE (NaN for iteration 0)
  double val_loss = 0.0;
  double max_violation = 0.0;
};

struct TrainingOptions {
  OptimizerConfig optimizer;
  std::size_t batch_size = 64;
  // When false the dual stays frozen at zero: plain minibatch training with
  // the same schedule and best-iterate selection.
  bool dual_enabled = true;
};

struct TrainingResult {
  DenseNet best;
  std::size_t best_iteration = 0;
  std::vector<TraceRecord> trace;
};

namespace detail {

// Endless stream of minibatches, reshuffled at every pass.
class BatchStream {
 public:
  BatchStream(const Split& data, std::size_t batch_size, Rng& rng)
      : data_(data), batch_size_(std::max<std::size_t>(1, batch_size)), rng_(rng), order_(data.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  Batch next() {
    if (cursor_ >= order_.size()) reshuffle();
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::span<const std::size_t> idx(order_.data() + cursor_, end - cursor_);
    cursor_ = end;
    return Batch{gather_rows(data_.x, idx), gather<int>(data_.labels, idx), gather<int>(data_.groups, idx)};
  }

  std::size_t batches_per_pass() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  const Split& data_;
  std::size_t batch_size_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct Evaluation {
  ConstraintValues g;
  double loss;
};

inline Evaluation evaluate_split(const DenseNet& net, const Split& s, const ConstraintSpec& spec) {
  auto f = forward(net, s.x);
  auto rates = group_rates(threshold(f.logits), s.labels, s.groups);
  return {constraint_values(rates, spec), bce_loss(f.probabilities, s.labels)};
}

}  // namespace detail

// E warmup epochs of plain training, then J iterations of
// (theta_step on a minibatch, exact constraints on validation, lambda_step).
// Returns the iterate with the smallest validation max-violation, ties broken
// by validation BCE and then by the earliest iteration. With the dual disabled
// the iterate with the smallest validation BCE is returned.
inline TrainingResult run_constrained_training(const DenseNet& init, const Split& train, const Split& validation,
                                               const ConstraintSpec& spec, const TrainingOptions& options,
                                               std::uint64_t seed) {
  spec.validate();
  if (validation.size() == 0) throw ConfigError("constrained training: validation split is empty");
  if (train.size() == 0) throw ConfigError("constrained training: training split is empty");

  OptimizerConfig opt_cfg = options.optimizer;
  double lambda_lr = spec.lambda_lr;
  if (spec.schedule && spec.iterations > 0) {
    auto steps = theoretical_step_sizes(*spec.schedule, spec.iterations);
    opt_cfg.learning_rate = steps.theta;
    lambda_lr = steps.lambda;
  }

  Rng rng(seed);
  DenseNet net = init;
  auto opt = OptimizerState::create(opt_cfg, net.params.size());
  detail::BatchStream stream(train, options.batch_size, rng);

  for (std::size_t e = 0; e < spec.warmup_epochs; ++e) {
    const std::size_t nb = stream.batches_per_pass();
    for (std::size_t b = 0; b < nb; ++b) theta_step(net, stream.next(), DualState{}, spec, opt);
  }

  TrainingResult result;
  DualState dual;
  auto ev = detail::evaluate_split(net, validation, spec);
  result.trace.push_back({0, dual.lambda, ev.g, std::numeric_limits<double>::quiet_NaN(), ev.loss, ev.g.max_violation()});
  result.best = net;
  double best_violation = ev.g.max_violation();
  double best_loss = ev.loss;

  for (std::size_t j = 1; j <= spec.iterations; ++j) {
    const double train_loss = theta_step(net, stream.next(), dual, spec, opt);
    ev = detail::evaluate_split(net, validation, spec);
    if (options.dual_enabled) {
      ConstraintVector g = ev.g.g;
      for (std::size_t i = 0; i < kNumConstraints; ++i)
        if (!ev.g.active[i]) g[i] = 0.0;
      dual = lambda_step(dual, g, lambda_lr, spec.lambda_radius);
    }
    const double violation = ev.g.max_violation();
    result.trace.push_back({j, dual.lambda, ev.g, train_loss, ev.loss, violation});
    const bool better = options.dual_enabled
                            ? violation < best_violation || (violation == best_violation && ev.loss < best_loss)
                            : ev.loss < best_loss;
    if (better) {
      best_violation = violation;
      best_loss = ev.loss;
      result.best = net;
      result.best_iteration = j;
    }
  }
  return result;
}

}  // namespace glf
