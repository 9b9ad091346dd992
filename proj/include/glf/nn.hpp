#pragma once

// Dense feed-forward binary classifier in double precision.
//
// Parameters live in one flat vector, layer by layer: the weight matrix
// row-major as [out x in], followed by the bias of that layer. Hidden layers
// use ReLU; the last layer emits a single logit. All reductions run over
// samples in ascending index order so results are bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "glf/error.hpp"
#include "glf/rng.hpp"

namespace glf {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Copy of the given rows, in the given order.
inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;

  // (in, out) per layer, output layer last.
  std::vector<std::pair<std::size_t, std::size_t>> layers() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t in = input_dim;
    for (auto h : hidden_dims) {
      out.emplace_back(in, h);
      in = h;
    }
    out.emplace_back(in, 1);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto [in, out] : layers()) n += (in + 1) * out;
    return n;
  }

  void validate() const {
    if (input_dim == 0) throw ConfigError("architecture: input_dim must be positive");
    for (auto h : hidden_dims)
      if (h == 0) throw ConfigError("architecture: hidden layer widths must be positive");
  }

  bool operator==(const Architecture&) const = default;
};

struct DenseNet {
  Architecture arch;
  std::vector<double> params;
  std::uint64_t seed = 0;  // creation seed, carried into checkpoints
};

// Glorot-uniform weights in +-sqrt(6 / (in + out)), zero biases.
inline std::vector<double> init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::vector<double> params;
  params.reserve(arch.param_count());
  Rng rng(derive_seed({seed, stream::kInit}));
  for (auto [in, out] : arch.layers()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < in * out; ++k) params.push_back(dist(rng));
    params.insert(params.end(), out, 0.0);
  }
  return params;
}

inline DenseNet make_net(const Architecture& arch, std::uint64_t seed) {
  return DenseNet{arch, init_params(arch, seed), seed};
}

inline double logistic(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct ForwardResult {
  std::vector<double> logits;
  std::vector<double> probabilities;
};

namespace detail {

inline void check_net(const DenseNet& net) {
  if (net.params.size() != net.arch.param_count())
    throw ShapeError("network: parameter vector has " + std::to_string(net.params.size()) +
                     " entries, architecture requires " + std::to_string(net.arch.param_count()));
}

inline void check_input(const DenseNet& net, const Matrix& x) {
  check_net(net);
  if (x.cols != net.arch.input_dim)
    throw ShapeError("forward: input has " + std::to_string(x.cols) + " columns, network expects " +
                     std::to_string(net.arch.input_dim));
}

// Post-activation values of every layer for one sample; acts[0] is the input.
inline void forward_sample(const DenseNet& net, std::span<const double> x,
                           std::vector<std::vector<double>>& acts) {
  const auto layers = net.arch.layers();
  acts.resize(layers.size() + 1);
  acts[0].assign(x.begin(), x.end());
  const double* p = net.params.data();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto [in, out] = layers[l];
    const double* w = p;
    const double* b = p + in * out;
    auto& a = acts[l + 1];
    a.assign(out, 0.0);
    const bool hidden = l + 1 < layers.size();
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* wr = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * acts[l][i];
      a[o] = hidden ? std::max(0.0, s) : s;
    }
    p += (in + 1) * out;
  }
}

}  // namespace detail

inline ForwardResult forward(const DenseNet& net, const Matrix& x) {
  detail::check_input(net, x);
  ForwardResult r;
  r.logits.resize(x.rows);
  r.probabilities.resize(x.rows);
  std::vector<std::vector<double>> acts;
  for (std::size_t i = 0; i < x.rows; ++i) {
    detail::forward_sample(net, x.row(i), acts);
    const double z = acts.back()[0];
    if (!std::isfinite(z)) throw NumericError("forward: non-finite logit at row " + std::to_string(i));
    r.logits[i] = z;
    r.probabilities[i] = logistic(z);
  }
  return r;
}

inline std::vector<int> predict(const DenseNet& net, const Matrix& x) {
  auto f = forward(net, x);
  std::vector<int> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = f.logits[i] >= 0.0 ? 1 : 0;
  return out;
}

inline constexpr double kProbabilityClamp = 1e-12;

inline double bce_term(double p, int y) noexcept {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return y ? -std::log(p) : -std::log1p(-p);
}

// Mean binary cross-entropy.
inline double bce_loss(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) throw ShapeError("bce_loss: length mismatch");
  if (probabilities.empty()) throw DomainError("bce_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) s += bce_term(probabilities[i], labels[i]);
  return s / static_cast<double>(labels.size());
}

// Sum_i w_i * l_i / Sum_i w_i; zero when every weight is zero.
inline double weighted_bce(std::span<const double> probabilities, std::span<const int> labels,
                           std::span<const double> weights) {
  if (probabilities.size() != labels.size() || weights.size() != labels.size())
    throw ShapeError("weighted_bce: length mismatch");
  double s = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s += weights[i] * bce_term(probabilities[i], labels[i]);
    wsum += weights[i];
  }
  return wsum > 0.0 ? s / wsum : 0.0;
}

// Parameter gradient of Sum_i logit_grad[i] * logit_i.
//
// This is the shared backward pass: any objective that is a function of the
// logits reduces to it once dObjective/dlogit is known per sample.
inline std::vector<double> backprop(const DenseNet& net, const Matrix& x,
                                    std::span<const double> logit_grad) {
  detail::check_input(net, x);
  if (logit_grad.size() != x.rows) throw ShapeError("backprop: one logit gradient per row required");
  const auto layers = net.arch.layers();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (auto [in, out] : layers) {
    offsets.push_back(off);
    off += (in + 1) * out;
  }
  std::vector<double> grad(net.params.size(), 0.0);
  std::vector<std::vector<double>> acts;
  std::vector<double> delta, prev_delta;
  for (std::size_t s = 0; s < x.rows; ++s) {
    const double g = logit_grad[s];
    if (g == 0.0) continue;
    detail::forward_sample(net, x.row(s), acts);
    delta.assign(1, g);
    for (std::size_t l = layers.size(); l-- > 0;) {
      auto [in, out] = layers[l];
      const double* w = net.params.data() + offsets[l];
      double* gw = grad.data() + offsets[l];
      double* gb = gw + in * out;
      const auto& a_in = acts[l];
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* gwr = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwr[i] += d * a_in[i];
        gb[o] += d;
      }
      if (l == 0) break;
      prev_delta.assign(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* wr = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev_delta[i] += d * wr[i];
      }
      // ReLU derivative, read off the post-activation value.
      for (std::size_t i = 0; i < in; ++i)
        if (a_in[i] <= 0.0) prev_delta[i] = 0.0;
      std::swap(delta, prev_delta);
    }
  }
  return grad;
}

// Gradient of weighted_bce(forward(net, x), labels, weights) w.r.t. params.
inline std::vector<double> backward(const DenseNet& net, const Matrix& x, std::span<const int> labels,
                                    std::span<const double> sample_weights) {
  if (labels.size() != x.rows || sample_weights.size() != x.rows)
    throw ShapeError("backward: labels and weights must match the row count");
  double wsum = 0.0;
  for (double w : sample_weights) {
    if (w < 0.0) throw DomainError("backward: negative sample weight");
    wsum += w;
  }
  std::vector<double> logit_grad(x.rows, 0.0);
  if (wsum > 0.0) {
    auto f = forward(net, x);
    for (std::size_t i = 0; i < x.rows; ++i)
      logit_grad[i] = sample_weights[i] * (f.probabilities[i] - labels[i]) / wsum;
  }
  return backprop(net, x, logit_grad);
}

inline std::vector<double> backward(const DenseNet& net, const Matrix& x, std::span<const int> labels) {
  std::vector<double> ones(x.rows, 1.0);
  return backward(net, x, labels, ones);
}

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<double> first;   // velocity (SGD) or first moment (Adam)
  std::vector<double> second;  // Adam second moment
  std::uint64_t steps = 0;

  static OptimizerState create(const OptimizerConfig& cfg, std::size_t n) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
    OptimizerState s{cfg, std::vector<double>(n, 0.0), {}, 0};
    if (cfg.kind == OptimizerKind::Adam) s.second.assign(n, 0.0);
    return s;
  }
};

// In-place update. A non-finite gradient aborts the step with params and
// state left untouched.
inline void opt_step(std::vector<double>& params, std::span<const double> grad, OptimizerState& st) {
  if (grad.size() != params.size() || st.first.size() != params.size())
    throw ShapeError("opt_step: gradient/state length does not match params");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericError("opt_step: non-finite gradient at index " + std::to_string(i));
  const auto& c = st.config;
  ++st.steps;
  if (c.kind == OptimizerKind::SgdMomentum) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.first[i] = c.momentum * st.first[i] + grad[i];
      params[i] -= c.learning_rate * st.first[i];
    }
    return;
  }
  const double t = static_cast<double>(st.steps);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.first[i] = c.beta1 * st.first[i] + (1.0 - c.beta1) * grad[i];
    st.second[i] = c.beta2 * st.second[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double mhat = st.first[i] / bc1;
    const double vhat = st.second[i] / bc2;
    params[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace glf
