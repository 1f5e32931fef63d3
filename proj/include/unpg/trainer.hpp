#pragma once

// Desk-scale training harness: synthetic clustered data on the sphere, P x Q
// class-balanced batches, SGD with momentum, linear warm-up followed by
// cosine annealing, and two parameterizations of the embeddings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unpg/error.hpp"
#include "unpg/loss.hpp"
#include "unpg/pairgen.hpp"
#include "unpg/sphere.hpp"

namespace unpg {

using Rng = std::mt19937_64;

/// Independent generator per purpose so that, e.g., changing the batch size
/// does not perturb weight initialization.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

enum RngStream : std::uint64_t {
  kStreamData = 1,
  kStreamWeights = 2,
  kStreamEncoder = 3,
  kStreamBatches = 4,
  kStreamMeans = 5,
};

inline std::vector<double> gaussian_vector(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = normal(rng);
  return v;
}

/// Uniform point on S^{d-1} (normalized Gaussian).
inline std::vector<double> random_unit(std::size_t d, Rng& rng) {
  for (;;) {
    auto v = gaussian_vector(d, rng);
    const double n = l2_norm(v);
    if (n < kZeroNormThreshold) continue;
    for (auto& x : v) x /= n;
    return v;
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 20;
  std::size_t dim = 8;
  /// Larger is tighter: samples are normalize(mean + noise / concentration).
  double concentration = 4.0;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticSpec& s) {
  if (s.num_classes < 2) throw Error(ErrorCode::ConfigInvalid, "synthetic.num_classes must be >= 2");
  if (s.dim < 2) throw Error(ErrorCode::ConfigInvalid, "synthetic.dim must be >= 2");
  if (s.samples_per_class < 1) throw Error(ErrorCode::ConfigInvalid, "synthetic.samples_per_class must be >= 1");
  if (!(s.concentration > 0.0)) throw Error(ErrorCode::ConfigInvalid, "synthetic.concentration must be > 0");
}

/// Unit-norm feature rows with class labels, stored class-major.
struct Dataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  std::vector<std::vector<std::size_t>> class_members() const {
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    return members;
  }
};

/// Generates samples around the given class means (one unit row per class).
inline Dataset gen_synthetic(const SyntheticSpec& spec, const Matrix& means) {
  validate(spec);
  if (means.rows() != spec.num_classes || means.cols() != spec.dim) {
    throw Error(ErrorCode::DimensionMismatch, "class means must be num_classes x dim");
  }
  Rng rng = make_rng(spec.seed, kStreamData);
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.features = Matrix(spec.num_classes * spec.samples_per_class, spec.dim);
  ds.labels.reserve(ds.features.rows());
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
      auto noise = gaussian_vector(spec.dim, rng);
      std::vector<double> x(spec.dim);
      for (std::size_t k = 0; k < spec.dim; ++k) x[k] = means(c, k) + noise[k] / spec.concentration;
      const UnitVector u = normalize(x);
      std::copy(u.values().begin(), u.values().end(), ds.features.row(row).begin());
      ds.labels.push_back(c);
    }
  }
  return ds;
}

/// Random class means drawn uniformly on the sphere, then gen_synthetic.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng = make_rng(spec.seed, kStreamMeans);
  Matrix means(spec.num_classes, spec.dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto u = random_unit(spec.dim, rng);
    std::copy(u.begin(), u.end(), means.row(c).begin());
  }
  return gen_synthetic(spec, means);
}

/// C rows drawn uniformly on S^{d-1}.
inline Matrix init_weights(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes < 1 || dim < 2) throw Error(ErrorCode::InvalidArgument, "init_weights needs C >= 1 and d >= 2");
  Rng rng = make_rng(seed, kStreamWeights);
  Matrix w(num_classes, dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto u = random_unit(dim, rng);
    std::copy(u.begin(), u.end(), w.row(c).begin());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Batches

struct SampledBatch {
  std::vector<std::size_t> indices;  // dataset rows
  std::vector<std::size_t> labels;
};

/// P distinct classes, Q distinct samples from each.
inline SampledBatch sample_batch(const Dataset& ds, std::size_t classes_per_batch, std::size_t samples_per_class,
                                 Rng& rng) {
  auto members = ds.class_members();
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].size() >= samples_per_class) eligible.push_back(c);
  }
  if (classes_per_batch == 0 || samples_per_class == 0) {
    throw Error(ErrorCode::InvalidArgument, "batch needs P >= 1 and Q >= 1");
  }
  if (eligible.size() < classes_per_batch) {
    throw Error(ErrorCode::InsufficientData, "only " + std::to_string(eligible.size()) + " classes hold " +
                                                 std::to_string(samples_per_class) + " samples; need " +
                                                 std::to_string(classes_per_batch));
  }
  // Partial Fisher-Yates draws without replacement.
  auto draw = [&rng](std::vector<std::size_t>& pool, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
  };
  draw(eligible, classes_per_batch);
  SampledBatch b;
  for (std::size_t c : eligible) {
    auto pool = members[c];
    draw(pool, samples_per_class);
    for (std::size_t idx : pool) {
      b.indices.push_back(idx);
      b.labels.push_back(c);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Configuration and schedule

enum class TrainMode { free_embedding, linear_encoder };

inline const char* to_string(TrainMode m) {
  return m == TrainMode::free_embedding ? "free_embedding" : "linear_encoder";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "free_embedding") return TrainMode::free_embedding;
  if (s == "linear_encoder") return TrainMode::linear_encoder;
  throw Error(ErrorCode::ConfigInvalid, "unknown train.mode '" + s + "'");
}

/// Constant-score ml negatives appended to every batch before filtering:
/// `hard` copies at similarity +1 and `easy` copies at -1.
struct NoiseInjection {
  std::size_t hard = 0;
  std::size_t easy = 0;

  std::vector<double> scores() const {
    std::vector<double> s(hard, 1.0);
    s.insert(s.end(), easy, -1.0);
    return s;
  }
};

struct TrainConfig {
  TrainMode mode = TrainMode::free_embedding;
  std::size_t classes_per_batch = 8;    // P
  std::size_t samples_per_class = 4;    // Q
  double base_lr = 0.1;
  std::size_t warmup_epochs = 3;
  std::size_t max_epochs = 20;
  /// 0 derives ceil(dataset size / batch size).
  std::size_t steps_per_epoch = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Linear-encoder output dimension; 0 keeps the input dimension.
  std::size_t embedding_dim = 0;
  LossConfig loss{};
  NoiseInjection noise{};
  std::uint64_t seed = 0;

  std::size_t batch_size() const noexcept { return classes_per_batch * samples_per_class; }
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.classes_per_batch < 1 || cfg.samples_per_class < 1) {
    throw Error(ErrorCode::ConfigInvalid, "train.classes_per_batch and train.samples_per_class must be >= 1");
  }
  if (cfg.batch_size() < 2) throw Error(ErrorCode::ConfigInvalid, "train batch size P*Q must be >= 2");
  if (!(cfg.base_lr > 0.0)) throw Error(ErrorCode::ConfigInvalid, "train.base_lr must be > 0");
  if (cfg.max_epochs > 0 && cfg.warmup_epochs >= cfg.max_epochs) {
    throw Error(ErrorCode::ConfigInvalid, "train.warmup_epochs must be < train.max_epochs");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw Error(ErrorCode::ConfigInvalid, "train.momentum must be in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "train.weight_decay must be >= 0");
  validate(cfg.loss);
}

inline std::size_t resolve_steps_per_epoch(const TrainConfig& cfg, std::size_t dataset_size) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const std::size_t n = cfg.batch_size();
  return std::max<std::size_t>(1, (dataset_size + n - 1) / n);
}

inline std::size_t total_steps(const TrainConfig& cfg) { return cfg.max_epochs * cfg.steps_per_epoch; }

/// Linear warm-up 0 -> base_lr, then base_lr (1 + cos(pi t)) / 2 down to 0 at
/// the last epoch. Expects cfg.steps_per_epoch resolved (>= 1).
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  const std::size_t spe = std::max<std::size_t>(1, cfg.steps_per_epoch);
  const auto warm = static_cast<double>(cfg.warmup_epochs * spe);
  const auto total = static_cast<double>(cfg.max_epochs * spe);
  const double t = std::min(static_cast<double>(step), total);
  if (t < warm) return cfg.base_lr * t / warm;
  if (total <= warm) return 0.0;
  const double progress = (t - warm) / (total - warm);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  /// free_embedding: one raw row per dataset sample.
  /// linear_encoder: embedding_dim x input_dim matrix.
  Matrix params;
  Matrix weights;  // class weights, unit rows
  Matrix params_velocity;
  Matrix weights_velocity;
  std::size_t step = 0;
  double lr = 0.0;
};

inline std::size_t embedding_dim(const TrainConfig& cfg, std::size_t input_dim) {
  return cfg.mode == TrainMode::linear_encoder && cfg.embedding_dim > 0 ? cfg.embedding_dim : input_dim;
}

inline OptimizerState init_state(const Dataset& ds, const TrainConfig& cfg) {
  OptimizerState st;
  const std::size_t d_out = embedding_dim(cfg, ds.dim());
  if (cfg.mode == TrainMode::free_embedding) {
    st.params = ds.features;
  } else {
    Rng rng = make_rng(cfg.seed, kStreamEncoder);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(ds.dim())));
    st.params = Matrix(d_out, ds.dim());
    for (auto& x : st.params.data()) x = normal(rng);
  }
  st.weights = init_weights(ds.num_classes, d_out, cfg.seed);
  st.params_velocity = Matrix(st.params.rows(), st.params.cols());
  st.weights_velocity = Matrix(st.weights.rows(), st.weights.cols());
  return st;
}

/// Raw (unnormalized) embedding of each requested dataset row.
inline Matrix raw_embeddings(const OptimizerState& st, const Dataset& ds, const TrainConfig& cfg,
                             std::span<const std::size_t> rows) {
  Matrix out(rows.size(), cfg.mode == TrainMode::free_embedding ? st.params.cols() : st.params.rows());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (cfg.mode == TrainMode::free_embedding) {
      const auto src = st.params.row(rows[b]);
      std::copy(src.begin(), src.end(), out.row(b).begin());
    } else {
      const auto x = ds.features.row(rows[b]);
      for (std::size_t r = 0; r < st.params.rows(); ++r) out(b, r) = dot(st.params.row(r), x);
    }
  }
  return out;
}

/// Normalized embeddings of the whole dataset.
inline std::vector<UnitVector> dataset_embeddings(const OptimizerState& st, const Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return normalize_rows(raw_embeddings(st, ds, cfg, all));
}

namespace detail {

inline void renormalize_row(std::span<double> row) {
  // A diverged row stays as it is; the caller reports the nonfinite step.
  if (!std::all_of(row.begin(), row.end(), [](double x) { return std::isfinite(x); })) return;
  // Pre-scale by the largest entry so the norm cannot overflow.
  double big = 0.0;
  for (double x : row) big = std::max(big, std::abs(x));
  if (big > 1.0) {
    for (double& x : row) x /= big;
  }
  const UnitVector u = normalize(row);
  std::copy(u.values().begin(), u.values().end(), row.begin());
}

/// v <- mu v + (g + wd p);  p <- p - lr v.
inline void momentum_update(std::span<double> p, std::span<double> v, std::span<const double> g, double lr,
                            double mu, double wd) {
  for (std::size_t k = 0; k < p.size(); ++k) {
    v[k] = mu * v[k] + g[k] + wd * p[k];
    if (lr != 0.0) p[k] -= lr * v[k];
  }
}

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

/// e_b = E x_b, so dL/dE = sum_b g_b x_b^T for embedding gradients g_b.
inline Matrix encoder_gradient(const Matrix& grad_embeddings, const Dataset& ds, std::span<const std::size_t> rows,
                               std::size_t input_dim) {
  Matrix g(grad_embeddings.cols(), input_dim);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const auto x = ds.features.row(rows[b]);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double gr = grad_embeddings(b, r);
      for (std::size_t k = 0; k < input_dim; ++k) g(r, k) += gr * x[k];
    }
  }
  return g;
}

struct StepResult {
  LossOutput loss;
  double lr = 0.0;
  std::size_t ml_negatives = 0;
  std::size_t ml_kept = 0;
  bool finite = true;
};

/// One SGD-with-momentum update over a sampled batch. Updated embedding and
/// class-weight rows are re-normalized; with lr == 0 parameters are untouched.
inline StepResult train_step(OptimizerState& st, const Dataset& ds, const SampledBatch& batch,
                             const TrainConfig& cfg) {
  StepResult res;
  res.lr = lr_at(st.step, cfg);
  st.lr = res.lr;

  const Matrix raw = raw_embeddings(st, ds, cfg, batch.indices);
  const auto injected = cfg.noise.scores();
  const BatchForward fwd = batch_forward(raw, batch.labels, st.weights, cfg.loss, injected);
  const ParameterGradients grads = embedding_backward(fwd, raw, batch.labels, st.weights, cfg.loss);
  res.loss = fwd.loss;
  res.ml_negatives = fwd.ml_negatives.size() + fwd.injected_total;
  res.ml_kept = fwd.ml_kept.size() + fwd.injected_kept.size();
  res.finite = std::isfinite(res.loss.value) && detail::all_finite(grads.embeddings) && detail::all_finite(grads.weights);

  const double lr = res.lr;
  const double mu = cfg.momentum;
  const double wd = cfg.weight_decay;
  if (cfg.mode == TrainMode::free_embedding) {
    for (std::size_t b = 0; b < batch.indices.size(); ++b) {
      const std::size_t r = batch.indices[b];
      detail::momentum_update(st.params.row(r), st.params_velocity.row(r), grads.embeddings.row(b), lr, mu, wd);
      if (lr != 0.0) detail::renormalize_row(st.params.row(r));
    }
  } else {
    const Matrix g_enc = encoder_gradient(grads.embeddings, ds, batch.indices, st.params.cols());
    detail::momentum_update(st.params.data(), st.params_velocity.data(), g_enc.data(), lr, mu, wd);
  }
  for (std::size_t c = 0; c < st.weights.rows(); ++c) {
    detail::momentum_update(st.weights.row(c), st.weights_velocity.row(c), grads.weights.row(c), lr, mu, wd);
    if (lr != 0.0) detail::renormalize_row(st.weights.row(c));
  }
  ++st.step;
  return res;
}

/// Called after every step with (step index, result). Returning false stops
/// training.
using StepObserver = std::function<bool(std::size_t, const StepResult&)>;

struct TrainOutcome {
  OptimizerState state;
  std::vector<double> losses;
  bool completed = true;  // false when the observer stopped the run
};

/// Runs cfg.max_epochs * steps_per_epoch steps. cfg.steps_per_epoch is
/// resolved against the dataset when left at 0.
inline TrainOutcome train(const Dataset& ds, TrainConfig cfg, const StepObserver& observer = {}) {
  validate(cfg);
  cfg.steps_per_epoch = resolve_steps_per_epoch(cfg, ds.size());
  TrainOutcome out;
  out.state = init_state(ds, cfg);
  Rng batch_rng = make_rng(cfg.seed, kStreamBatches);
  const std::size_t steps = total_steps(cfg);
  out.losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const SampledBatch batch = sample_batch(ds, cfg.classes_per_batch, cfg.samples_per_class, batch_rng);
    const StepResult r = train_step(out.state, ds, batch, cfg);
    out.losses.push_back(r.loss.value);
    if (observer && !observer(s, r)) {
      out.completed = false;
      break;
    }
  }
  return out;
}

}  // namespace unpg
