#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "unpg/trainer.hpp"

using namespace unpg;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.classes_per_batch = 4;
  cfg.samples_per_class = 4;
  cfg.max_epochs = 10;
  cfg.warmup_epochs = 1;
  cfg.steps_per_epoch = 20;
  cfg.loss.gamma = 16.0;
  return cfg;
}

SyntheticSpec small_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.num_classes = 8;
  s.samples_per_class = 10;
  s.dim = 8;
  s.concentration = 2.0;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(GenSynthetic, ZeroNoiseLimitSitsOnMeans) {
  auto spec = small_spec();
  spec.concentration = 1e12;
  oracle::Gen gen(1);
  Matrix means(spec.num_classes, spec.dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto u = normalize(gen.gaussian(spec.dim));
    std::copy(u.values().begin(), u.values().end(), means.row(c).begin());
  }
  const Dataset ds = gen_synthetic(spec, means);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_NEAR(oracle::raw_dot(ds.features.row(i), means.row(ds.labels[i])), 1.0, 1e-9);
  }
}

TEST(GenSynthetic, AntipodalMeans) {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.samples_per_class = 5;
  spec.dim = 3;
  spec.concentration = 1e6;
  Matrix means(2, 3);
  means(0, 0) = 1.0;
  means(1, 0) = -1.0;
  const Dataset ds = gen_synthetic(spec, means);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 5; j < 10; ++j) {
      EXPECT_NEAR(oracle::raw_dot(ds.features.row(i), ds.features.row(j)), -1.0, 1e-9);
    }
  }
}

TEST(GenSynthetic, DeterministicAndShaped) {
  const auto a = gen_synthetic(small_spec());
  const auto b = gen_synthetic(small_spec());
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.size(), 80u);
  EXPECT_EQ(a.dim(), 8u);
  EXPECT_NE(gen_synthetic(small_spec(4)).features, a.features);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(l2_norm(a.features.row(i)), 1.0, 1e-12);
}

TEST(GenSynthetic, Validation) {
  auto s = small_spec();
  s.num_classes = 1;
  EXPECT_THROW(gen_synthetic(s), Error);
  s = small_spec();
  s.dim = 1;
  EXPECT_THROW(gen_synthetic(s), Error);
  s = small_spec();
  s.concentration = 0.0;
  EXPECT_THROW(gen_synthetic(s), Error);
  EXPECT_THROW(gen_synthetic(small_spec(), Matrix(3, 8)), Error);
}

TEST(SampleBatch, TwoByTwo) {
  const Dataset ds = gen_synthetic(small_spec());
  Rng rng = make_rng(0, kStreamBatches);
  const auto b = sample_batch(ds, 2, 2, rng);
  ASSERT_EQ(b.indices.size(), 4u);
  EXPECT_EQ(mlpg(b.labels).positives.size(), 2u);
}

TEST(SampleBatch, SingleClassAndSingleSample) {
  const Dataset ds = gen_synthetic(small_spec());
  Rng rng = make_rng(0, kStreamBatches);
  EXPECT_EQ(mlpg(sample_batch(ds, 1, 5, rng).labels).negatives.size(), 0u);
  const auto q1 = sample_batch(ds, 6, 1, rng);
  EXPECT_EQ(mlpg(q1.labels).positives.size(), 0u);
  EXPECT_EQ(mlpg(q1.labels).negatives.size(), 15u);
}

TEST(SampleBatch, InsufficientData) {
  const Dataset ds = gen_synthetic(small_spec());
  Rng rng = make_rng(0, kStreamBatches);
  for (auto [p, q] : {std::pair<std::size_t, std::size_t>{9, 2}, {2, 11}}) {
    try {
      sample_batch(ds, p, q, rng);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
    }
  }
}

TEST(LrSchedule, WarmupAndCosineEndpoints) {
  TrainConfig cfg;
  cfg.steps_per_epoch = 10;
  EXPECT_EQ(lr_at(0, cfg), 0.0);
  EXPECT_NEAR(lr_at(15, cfg), 0.05, 1e-15);
  EXPECT_EQ(lr_at(30, cfg), cfg.base_lr);
  EXPECT_NEAR(lr_at(200, cfg), 0.0, 1e-12);
  EXPECT_NEAR(lr_at(115, cfg), 0.05, 1e-12);
  for (std::size_t s = 30; s < 200; ++s) EXPECT_GE(lr_at(s, cfg), lr_at(s + 1, cfg));
}

TEST(TrainConfig, Defaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.base_lr, 0.1);
  EXPECT_EQ(cfg.momentum, 0.9);
  EXPECT_EQ(cfg.weight_decay, 5e-4);
  EXPECT_EQ(cfg.warmup_epochs, 3u);
  EXPECT_EQ(cfg.batch_size(), cfg.classes_per_batch * cfg.samples_per_class);
  EXPECT_NO_THROW(validate(cfg));
}

TEST(TrainConfig, Validation) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(validate(c), Error);
  };
  bad([](TrainConfig& c) { c.base_lr = 0.0; });
  bad([](TrainConfig& c) { c.warmup_epochs = c.max_epochs; });
  bad([](TrainConfig& c) { c.momentum = 1.0; });
  bad([](TrainConfig& c) { c.classes_per_batch = 1, c.samples_per_class = 1; });
  bad([](TrainConfig& c) { c.loss.gamma = -2.0; });
  TrainConfig zero;
  zero.max_epochs = 0;
  EXPECT_NO_THROW(validate(zero));
  EXPECT_EQ(parse_train_mode("linear_encoder"), TrainMode::linear_encoder);
  EXPECT_THROW(parse_train_mode("mlp"), Error);
}

TEST(InitWeights, UnitRowsAndReproducible) {
  const Matrix w = init_weights(10, 6, 9);
  for (std::size_t c = 0; c < 10; ++c) EXPECT_NEAR(l2_norm(w.row(c)), 1.0, 1e-9);
  EXPECT_EQ(w, init_weights(10, 6, 9));
  EXPECT_NE(w, init_weights(10, 6, 10));
}

TEST(InitWeights, MeanCosineNearZeroOverSeeds) {
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Matrix w = init_weights(2, 2, s);
    sum += oracle::raw_dot(w.row(0), w.row(1));
  }
  EXPECT_LT(std::abs(sum / 1000.0), 0.05);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  const Dataset ds = gen_synthetic(small_spec());
  auto cfg = small_config();
  OptimizerState st = init_state(ds, cfg);
  const OptimizerState before = st;
  Rng rng = make_rng(0, kStreamBatches);
  const auto r = train_step(st, ds, sample_batch(ds, 4, 4, rng), cfg);
  EXPECT_EQ(r.lr, 0.0);
  EXPECT_EQ(st.params, before.params);
  EXPECT_EQ(st.weights, before.weights);
  EXPECT_EQ(st.step, 1u);
}

TEST(TrainStep, SingleClassBatchIgnoresUnpg) {
  const Dataset ds = gen_synthetic(small_spec());
  auto on = small_config();
  auto off = on;
  off.loss.unpg_enabled = false;
  OptimizerState a = init_state(ds, on);
  OptimizerState b = init_state(ds, off);
  a.step = b.step = 40;
  Rng rng = make_rng(0, kStreamBatches);
  const auto batch = sample_batch(ds, 1, 6, rng);
  const auto ra = train_step(a, ds, batch, on);
  const auto rb = train_step(b, ds, batch, off);
  EXPECT_EQ(ra.ml_negatives, 0u);
  EXPECT_EQ(ra.loss.value, rb.loss.value);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(TrainStep, RenormalizesUpdatedRows) {
  const Dataset ds = gen_synthetic(small_spec());
  auto cfg = small_config();
  OptimizerState st = init_state(ds, cfg);
  st.step = 30;
  Rng rng = make_rng(0, kStreamBatches);
  for (int k = 0; k < 5; ++k) train_step(st, ds, sample_batch(ds, 4, 4, rng), cfg);
  for (std::size_t r = 0; r < st.params.rows(); ++r) EXPECT_NEAR(l2_norm(st.params.row(r)), 1.0, 1e-9);
  for (std::size_t r = 0; r < st.weights.rows(); ++r) EXPECT_NEAR(l2_norm(st.weights.row(r)), 1.0, 1e-9);
}

TEST(Train, SnpairLossDecreases) {
  SyntheticSpec spec = small_spec();
  spec.samples_per_class = 20;
  const Dataset ds = gen_synthetic(spec);
  TrainConfig cfg;
  cfg.loss.margin = {MarginVariant::snpair, 0.0};
  cfg.loss.gamma = 16.0;
  cfg.classes_per_batch = 8;
  cfg.samples_per_class = 4;
  cfg.max_epochs = 10;
  cfg.warmup_epochs = 1;
  cfg.steps_per_epoch = 20;
  const auto out = train(ds, cfg);
  ASSERT_EQ(out.losses.size(), 200u);
  const double first = std::accumulate(out.losses.begin(), out.losses.begin() + 20, 0.0) / 20.0;
  const double last = std::accumulate(out.losses.end() - 20, out.losses.end(), 0.0) / 20.0;
  EXPECT_LT(last, first);
}

TEST(Train, BitwiseDeterministic) {
  const Dataset ds = gen_synthetic(small_spec());
  for (auto mode : {TrainMode::free_embedding, TrainMode::linear_encoder}) {
    auto cfg = small_config();
    cfg.mode = mode;
    const auto a = train(ds, cfg);
    const auto b = train(ds, cfg);
    EXPECT_EQ(a.losses, b.losses);
    EXPECT_EQ(a.state.params, b.state.params);
  }
}

TEST(Train, ObserverCanStop) {
  const Dataset ds = gen_synthetic(small_spec());
  const auto out = train(ds, small_config(), [](std::size_t s, const StepResult&) { return s < 4; });
  EXPECT_FALSE(out.completed);
  EXPECT_EQ(out.losses.size(), 5u);
}

TEST(LinearEncoder, GradientMatchesFiniteDifferences) {
  const Dataset ds = gen_synthetic(small_spec());
  auto cfg = small_config();
  cfg.mode = TrainMode::linear_encoder;
  cfg.embedding_dim = 5;
  OptimizerState st = init_state(ds, cfg);
  ASSERT_EQ(st.params.rows(), 5u);
  ASSERT_EQ(st.weights.cols(), 5u);
  Rng rng = make_rng(0, kStreamBatches);
  const auto batch = sample_batch(ds, 4, 4, rng);
  auto f = [&] {
    return batch_forward(raw_embeddings(st, ds, cfg, batch.indices), batch.labels, st.weights, cfg.loss).loss.value;
  };
  const Matrix raw = raw_embeddings(st, ds, cfg, batch.indices);
  const auto fwd = batch_forward(raw, batch.labels, st.weights, cfg.loss);
  const auto g = embedding_backward(fwd, raw, batch.labels, st.weights, cfg.loss);
  const Matrix ge = encoder_gradient(g.embeddings, ds, batch.indices, ds.dim());
  const auto fd = oracle::fd_gradient(st.params.data(), f, 1e-5);
  EXPECT_LE(oracle::rel_error(ge.data(), fd), 1e-4);
}

TEST(Optimizer, WeightDecayKeepsDirectionWithZeroGradient) {
  std::vector<double> p{0.6, 0.8, 0.0};
  std::vector<double> v(3, 0.0);
  const std::vector<double> g(3, 0.0);
  detail::momentum_update(p, v, g, 0.1, 0.9, 5e-4);
  detail::renormalize_row(p);
  EXPECT_NEAR(p[0], 0.6, 1e-15);
  EXPECT_NEAR(p[1], 0.8, 1e-15);
}

TEST(Optimizer, UnpgOffSnpairIsNormalizedSoftmax) {
  oracle::Gen gen(61);
  const Matrix emb = gen.gaussian_matrix(6, 4);
  const auto y = gen.labels(6, 3);
  const Matrix w = gen.gaussian_matrix(3, 4);
  LossConfig cfg;
  cfg.unpg_enabled = false;
  cfg.margin = {MarginVariant::snpair, 0.0};
  cfg.gamma = 10.0;
  double ce = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto e = normalize(emb.row(i));
    double z = 0.0;
    double own = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double logit = 10.0 * cos_sim(e, normalize(w.row(c)));
      z += std::exp(logit);
      if (c == y[i]) own = logit;
    }
    ce += std::log(z) - own;
  }
  EXPECT_NEAR(batch_forward(emb, y, w, cfg).loss.value, ce / 6.0, 1e-12);
}

TEST(NoiseInjection, Scores) {
  const NoiseInjection n{2, 3};
  EXPECT_EQ(n.scores(), (std::vector<double>{1, 1, -1, -1, -1}));
  EXPECT_TRUE(NoiseInjection{}.scores().empty());
}

// Properties over random inputs.

TEST(TrainerProperty, BatchesAreClassBalanced) {
  oracle::Gen gen(62);
  const Dataset ds = gen_synthetic(small_spec());
  Rng rng = make_rng(5, kStreamBatches);
  for (int t = 0; t < 200; ++t) {
    const std::size_t p = 1 + gen.index(8);
    const std::size_t q = 1 + gen.index(10);
    const auto b = sample_batch(ds, p, q, rng);
    ASSERT_EQ(b.indices.size(), p * q);
    std::set<std::size_t> rows(b.indices.begin(), b.indices.end());
    EXPECT_EQ(rows.size(), p * q);
    std::set<std::size_t> classes(b.labels.begin(), b.labels.end());
    EXPECT_EQ(classes.size(), p);
    for (std::size_t k = 0; k < b.indices.size(); ++k) EXPECT_EQ(ds.labels[b.indices[k]], b.labels[k]);
    EXPECT_GE(mlpg(b.labels).positives.size(), p * q * (q - 1) / 2);
  }
}

TEST(TrainerProperty, LrWithinBounds) {
  oracle::Gen gen(63);
  for (int t = 0; t < 200; ++t) {
    TrainConfig cfg;
    cfg.max_epochs = 2 + gen.index(20);
    cfg.warmup_epochs = gen.index(cfg.max_epochs);
    cfg.steps_per_epoch = 1 + gen.index(30);
    cfg.base_lr = gen.uniform(0.01, 1.0);
    const std::size_t total = cfg.max_epochs * cfg.steps_per_epoch;
    for (std::size_t s = 0; s <= total; ++s) {
      const double lr = lr_at(s, cfg);
      EXPECT_GE(lr, 0.0);
      EXPECT_LE(lr, cfg.base_lr * (1.0 + 1e-15));
    }
    EXPECT_NEAR(lr_at(total, cfg), 0.0, 1e-12);
  }
}
