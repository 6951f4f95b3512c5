#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfair/common.hpp"
#include "fedfair/example.hpp"

namespace fedfair {

// ============================================================================
// Single-hidden-layer MLP: tanh hidden units, softmax output, cross-entropy
// loss. Parameters live in one flat vector so averaging and transmission
// counting stay trivial.
//
// Layout: W1 (hidden x input, row-major), b1, W2 (classes x hidden,
// row-major), b2.
// ============================================================================

struct MlpArchitecture {
  int input_dim = 0;
  int hidden_dim = 0;
  int num_classes = 0;

  int param_count() const {
    return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim +
           num_classes;
  }

  bool operator==(const MlpArchitecture &o) const = default;
};

struct ModelParams {
  MlpArchitecture arch;
  std::vector<double> values;

  bool operator==(const ModelParams &o) const = default;
};

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_arch(const MlpArchitecture &arch) {
  if (arch.input_dim <= 0 || arch.hidden_dim <= 0 || arch.num_classes <= 0) {
    throw ConfigError("architecture dims must be positive (got input=" +
                      std::to_string(arch.input_dim) +
                      " hidden=" + std::to_string(arch.hidden_dim) +
                      " classes=" + std::to_string(arch.num_classes) + ")");
  }
}

// Offsets into the flat parameter vector.
struct Layout {
  int w1, b1, w2, b2;
  explicit Layout(const MlpArchitecture &a)
      : w1(0),
        b1(a.hidden_dim * a.input_dim),
        w2(b1 + a.hidden_dim),
        b2(w2 + a.num_classes * a.hidden_dim) {}
};

constexpr double kProbClamp = 1e-12;

inline void forward(const ModelParams &p, std::span<const double> x,
                    std::vector<double> &hidden, std::vector<double> &probs) {
  const auto &a = p.arch;
  Layout L(a);
  hidden.assign(a.hidden_dim, 0.0);
  for (int h = 0; h < a.hidden_dim; ++h) {
    double z = p.values[L.b1 + h];
    const double *w = &p.values[L.w1 + h * a.input_dim];
    for (int i = 0; i < a.input_dim; ++i) z += w[i] * x[i];
    hidden[h] = std::tanh(z);
  }
  probs.assign(a.num_classes, 0.0);
  double max_logit = -kInf;
  for (int c = 0; c < a.num_classes; ++c) {
    double z = p.values[L.b2 + c];
    const double *w = &p.values[L.w2 + c * a.hidden_dim];
    for (int h = 0; h < a.hidden_dim; ++h) z += w[h] * hidden[h];
    probs[c] = z;
    max_logit = std::max(max_logit, z);
  }
  double sum = 0.0;
  for (int c = 0; c < a.num_classes; ++c) {
    probs[c] = std::exp(probs[c] - max_logit);
    sum += probs[c];
  }
  for (int c = 0; c < a.num_classes; ++c) probs[c] /= sum;
}

}  // namespace detail

// Deterministic init: uniform(-0.1, 0.1) weights, zero biases.
inline ModelParams init_params(const MlpArchitecture &arch,
                               std::uint64_t seed) {
  detail::check_arch(arch);
  detail::Layout L(arch);
  ModelParams p;
  p.arch = arch;
  p.values.assign(arch.param_count(), 0.0);
  Rng rng(derive_seed(seed, SeedTag::ModelInit, {}));
  for (int i = L.w1; i < L.b1; ++i) p.values[i] = rng.uniform(-0.1, 0.1);
  for (int i = L.w2; i < L.b2; ++i) p.values[i] = rng.uniform(-0.1, 0.1);
  return p;
}

// Class probabilities for one input (softmax output, sums to 1).
inline std::vector<double> predict(const ModelParams &p,
                                   std::span<const double> x) {
  if (static_cast<int>(x.size()) != p.arch.input_dim) {
    throw ShapeError("input dim mismatch: expected " +
                     std::to_string(p.arch.input_dim) + ", got " +
                     std::to_string(x.size()));
  }
  std::vector<double> hidden, probs;
  detail::forward(p, x, hidden, probs);
  return probs;
}

inline int predict_class(const ModelParams &p, std::span<const double> x) {
  auto probs = predict(p, x);
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                          probs.begin());
}

// Mean cross-entropy over the batch. Probabilities are clamped to
// [1e-12, 1] inside the log.
inline double loss(const ModelParams &p, std::span<const Example> batch) {
  if (batch.empty()) throw EmptyInputError("loss: empty batch");
  std::vector<double> hidden, probs;
  double total = 0.0;
  for (const Example &e : batch) {
    if (static_cast<int>(e.features.size()) != p.arch.input_dim) {
      throw ShapeError("loss: example feature dim mismatch");
    }
    detail::forward(p, e.features, hidden, probs);
    double q = std::clamp(probs[e.label], detail::kProbClamp, 1.0);
    total += -std::log(q);
  }
  return total / static_cast<double>(batch.size());
}

// Mean cross-entropy over the subset with the given group id; nullopt when
// the subset is empty.
inline std::optional<double> group_loss(const ModelParams &p,
                                        std::span<const Example> batch,
                                        int group) {
  std::vector<double> hidden, probs;
  double total = 0.0;
  std::size_t n = 0;
  for (const Example &e : batch) {
    if (e.group != group) continue;
    detail::forward(p, e.features, hidden, probs);
    double q = std::clamp(probs[e.label], detail::kProbClamp, 1.0);
    total += -std::log(q);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

namespace detail {

// Accumulate the mean cross-entropy gradient of the selected examples into
// g (overwritten). Scratch buffers avoid per-example allocation.
struct GradScratch {
  std::vector<double> hidden, probs, dz2, dh;
};

inline void gradient_into(const ModelParams &p, std::span<const Example> data,
                          std::span<const std::size_t> indices,
                          std::vector<double> &g, GradScratch &scratch) {
  const auto &a = p.arch;
  Layout L(a);
  g.assign(p.values.size(), 0.0);
  auto &[hidden, probs, dz2, dh] = scratch;
  dz2.assign(a.num_classes, 0.0);
  dh.assign(a.hidden_dim, 0.0);
  for (std::size_t idx : indices) {
    const Example &e = data[idx];
    if (static_cast<int>(e.features.size()) != a.input_dim) {
      throw ShapeError("gradient: example feature dim mismatch");
    }
    forward(p, e.features, hidden, probs);
    for (int c = 0; c < a.num_classes; ++c) {
      dz2[c] = probs[c] - (c == e.label ? 1.0 : 0.0);
    }
    for (int c = 0; c < a.num_classes; ++c) {
      double *gw = &g[L.w2 + c * a.hidden_dim];
      for (int h = 0; h < a.hidden_dim; ++h) gw[h] += dz2[c] * hidden[h];
      g[L.b2 + c] += dz2[c];
    }
    for (int h = 0; h < a.hidden_dim; ++h) {
      double acc = 0.0;
      for (int c = 0; c < a.num_classes; ++c) {
        acc += p.values[L.w2 + c * a.hidden_dim + h] * dz2[c];
      }
      dh[h] = acc * (1.0 - hidden[h] * hidden[h]);
    }
    for (int h = 0; h < a.hidden_dim; ++h) {
      double *gw = &g[L.w1 + h * a.input_dim];
      for (int i = 0; i < a.input_dim; ++i) gw[i] += dh[h] * e.features[i];
      g[L.b1 + h] += dh[h];
    }
  }
  double inv = 1.0 / static_cast<double>(indices.size());
  for (double &v : g) v *= inv;
}

}  // namespace detail

// Mean cross-entropy gradient via backpropagation; same shape as p.
inline ModelParams gradient(const ModelParams &p,
                            std::span<const Example> batch) {
  if (batch.empty()) throw EmptyInputError("gradient: empty batch");
  std::vector<std::size_t> all(batch.size());
  std::iota(all.begin(), all.end(), 0);
  ModelParams g;
  g.arch = p.arch;
  detail::GradScratch scratch;
  detail::gradient_into(p, batch, all, g.values, scratch);
  return g;
}

// Seeded minibatch SGD. Data is shuffled per epoch, split into batches of
// cfg.batch_size (last one may be short), one gradient step per batch.
// Pure: returns the updated copy.
inline ModelParams local_train(const ModelParams &p,
                               std::span<const Example> data,
                               const TrainConfig &cfg) {
  if (data.empty()) throw EmptyInputError("local_train: empty data");
  ModelParams out = p;
  Rng rng(derive_seed(cfg.seed, SeedTag::LocalTrain, {}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> g;
  detail::GradScratch scratch;
  const std::size_t bs = static_cast<std::size_t>(std::max(cfg.batch_size, 1));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::size_t end = std::min(start + bs, order.size());
      detail::gradient_into(
          out, data, std::span<const std::size_t>(&order[start], end - start),
          g, scratch);
      for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] -= cfg.learning_rate * g[i];
        if (!std::isfinite(out.values[i])) {
          throw NumericError("local_train: non-finite parameter after batch " +
                             std::to_string(start / bs) + " of epoch " +
                             std::to_string(epoch));
        }
      }
    }
  }
  return out;
}

// Elementwise convex combination; weights normalized by their sum,
// summation in ascending list-index order.
inline ModelParams weighted_average(std::span<const ModelParams> models,
                                    std::span<const double> weights) {
  if (models.empty()) throw EmptyInputError("weighted_average: no models");
  if (models.size() != weights.size()) {
    throw ShapeError("weighted_average: " + std::to_string(models.size()) +
                     " models vs " + std::to_string(weights.size()) +
                     " weights");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("weighted_average: negative weight");
    sum += w;
  }
  if (sum <= 0.0) throw ConfigError("weighted_average: zero weight sum");
  ModelParams out;
  out.arch = models[0].arch;
  out.values.assign(models[0].values.size(), 0.0);
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (!(models[m].arch == out.arch)) {
      throw ShapeError("weighted_average: mismatched architectures");
    }
    double w = weights[m] / sum;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += w * models[m].values[i];
    }
  }
  return out;
}

}  // namespace fedfair
