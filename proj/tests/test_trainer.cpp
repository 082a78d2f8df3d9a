#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lte/trainer.hpp"
#include "oracles.hpp"

using namespace lte;

namespace {

std::vector<ShapePair> corpus(std::size_t n, std::size_t points, std::uint64_t seed) {
  std::vector<ShapePair> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(gen_pair(i % 2 ? BaseShape::Torus : BaseShape::Sphere, points, 0.15, seed + i));
  return d;
}

EmbedConfig tiny_embed() {
  EmbedConfig c;
  c.k_graph = 6;
  c.layer_dims = {16, 16};
  c.out_dim = 16;
  return c;
}

}  // namespace

TEST(Schedule, WarmupAndCosine) {
  TrainConfig c;
  c.epochs = 30;
  c.warmup_epochs = 3;
  EXPECT_EQ(lr_at(0.0, c), 0.0);
  EXPECT_NEAR(lr_at(0.1, c), 3e-4, 1e-18);
  EXPECT_NEAR(lr_at(1.0, c), 0.0, 1e-12);
  EXPECT_NEAR(lr_at(0.05, c), 1.5e-4, 1e-15);
  EXPECT_NEAR(lr_at(0.55, c), 1.5e-4, 1e-15);  // halfway through the cosine phase
  double prev = lr_at(0.1, c);
  for (int i = 11; i <= 100; ++i) {
    const double v = lr_at(i / 100.0, c);
    EXPECT_LE(v, prev + 1e-18);
    prev = v;
  }
  c.warmup_epochs = 0;
  EXPECT_EQ(lr_at(0.0, c), 3e-4);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr0 = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.warmup_epochs = c.epochs + 1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Optimizer, ZeroGradientZeroDecayLeavesParams) {
  std::vector<Tensor> p{Tensor::vector({1, -2, 3})};
  auto s = AdamState::fresh(p);
  TrainConfig c;
  c.weight_decay = 0;
  optimizer_step(p, {"w"}, {{0, 0, 0}}, s, 0.1, c);
  EXPECT_EQ(p[0].values(), (std::vector<double>{1, -2, 3}));
}

TEST(Optimizer, FirstStepMovesByLearningRate) {
  std::vector<Tensor> p{Tensor::scalar(2.0)};
  auto s = AdamState::fresh(p);
  TrainConfig c;
  c.weight_decay = 0;
  optimizer_step(p, {"w"}, {{1.0}}, s, 0.1, c);
  EXPECT_NEAR(p[0].item(), 1.9, 1e-8);
}

TEST(Optimizer, DecayIsDecoupled) {
  std::vector<Tensor> p{Tensor::scalar(2.0)};
  auto s = AdamState::fresh(p);
  TrainConfig c;
  c.weight_decay = 0.5;
  optimizer_step(p, {"w"}, {{0.0}}, s, 0.1, c);
  EXPECT_NEAR(p[0].item(), 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Optimizer, MatchesReferenceTrajectory) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0, 1);
  std::vector<Tensor> p{oracle::random_tensor(rng, {3, 2}), oracle::random_tensor(rng, {4})};
  std::vector<double> flat;
  for (const auto& t : p) flat.insert(flat.end(), t.values().begin(), t.values().end());
  TrainConfig c;
  oracle::ReferenceAdamW ref(flat.size(), c.beta1, c.beta2, c.eps, c.weight_decay);
  auto s = AdamState::fresh(p);
  for (int step = 0; step < 10; ++step) {
    std::vector<std::vector<double>> g{std::vector<double>(6), std::vector<double>(4)};
    std::vector<double> gflat;
    for (auto& gi : g)
      for (auto& v : gi) gflat.push_back(v = normal(rng));
    const double lr = 1e-2 * (step + 1);
    optimizer_step(p, {"a", "b"}, g, s, lr, c);
    ref.step(flat, gflat, lr);
  }
  std::size_t k = 0;
  for (const auto& t : p)
    for (double v : t.values()) EXPECT_NEAR(v, flat[k++], 1e-12);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  std::vector<Tensor> p{Tensor::vector({1}), Tensor::vector({1, 2})};
  auto s = AdamState::fresh(p);
  try {
    optimizer_step(p, {"first", "second"}, {{0.0}, {1.0, NAN}}, s, 0.1, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos) << e.what();
  }
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(p[0].item(), 1.0);
}

TEST(Train, DeterministicLogs) {
  auto data = corpus(1, 32, 5);
  TrainConfig c;
  c.epochs = 2;
  c.warmup_epochs = 1;
  auto a = train(data, tiny_embed(), ReconConfig{}, LossConfig{}, c);
  auto b = train(data, tiny_embed(), ReconConfig{}, LossConfig{}, c);
  EXPECT_EQ(a.log, b.log);
  for (std::size_t i = 0; i < a.params.tensors.size(); ++i) EXPECT_EQ(a.params.tensors[i].values(), b.params.tensors[i].values());
}

TEST(Train, ZeroLambdasOnlyDecay) {
  auto data = corpus(2, 32, 6);
  LossConfig l;
  l.lambda_cross = l.lambda_self = l.lambda_reg = 0.0;
  TrainConfig c;
  c.epochs = 2;
  c.warmup_epochs = 0;
  c.batch_size = 1;
  auto st = train(data, tiny_embed(), ReconConfig{}, l, c);
  for (const auto& e : st.log) EXPECT_EQ(e.mean_loss, 0.0);
  // With zero gradients AdamW reduces to p <- p (1 - lr * wd) per step.
  EmbedParams init = init_params(tiny_embed());
  const std::size_t steps = 4;
  for (std::size_t t = 0; t < init.tensors.size(); ++t) {
    std::vector<double> want = init.tensors[t].values();
    for (std::size_t s = 1; s <= steps; ++s) {
      const double lr = lr_at(static_cast<double>(s) / steps, c);
      for (auto& v : want) v -= lr * c.weight_decay * v;
    }
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(st.params.tensors[t][i], want[i], 1e-15);
  }
}

TEST(Train, ResumeMatchesUninterrupted) {
  auto data = corpus(3, 32, 7);
  TrainConfig c;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 2;
  auto full = train(data, tiny_embed(), ReconConfig{}, LossConfig{}, c);
  TrainConfig first = c;
  TrainState partial;
  partial.params = init_params(tiny_embed());
  partial.adam = AdamState::fresh(partial.params.tensors);
  // Stop after epoch 1 by throwing out of the callback.
  struct Stop {};
  try {
    train_continue(partial, data, ReconConfig{}, LossConfig{}, first, [](const TrainState& s) {
      if (s.epoch == 1) throw Stop{};
    });
  } catch (const Stop&) {
  }
  ASSERT_EQ(partial.epoch, 1u);
  TrainState resumed = partial;
  train_continue(resumed, data, ReconConfig{}, LossConfig{}, c);
  EXPECT_EQ(resumed.log, full.log);
  EXPECT_EQ(resumed.adam, full.adam);
  EXPECT_NEAR(resumed.log[1].lr, lr_at((1.0 * 2 + 1) / 6.0, c), 1e-18);
}

TEST(Train, ThreadCountDoesNotChangeResult) {
  auto data = corpus(4, 32, 8);
  TrainConfig c;
  c.epochs = 1;
  c.warmup_epochs = 0;
  setenv("LTE_THREADS", "1", 1);
  auto a = train(data, tiny_embed(), ReconConfig{}, LossConfig{}, c);
  setenv("LTE_THREADS", "3", 1);
  auto b = train(data, tiny_embed(), ReconConfig{}, LossConfig{}, c);
  unsetenv("LTE_THREADS");
  EXPECT_EQ(a.log, b.log);
  for (std::size_t i = 0; i < a.params.tensors.size(); ++i) EXPECT_EQ(a.params.tensors[i].values(), b.params.tensors[i].values());
}

TEST(Train, ErrorsNamePair) {
  std::vector<ShapePair> data = corpus(2, 32, 9);
  data.push_back(gen_pair(BaseShape::Sphere, 8, 0.1, 1));  // too few points for k_graph = 10
  TrainConfig c;
  c.epochs = 1;
  c.warmup_epochs = 0;
  c.batch_size = 3;
  try {
    train(data, EmbedConfig{}, ReconConfig{}, LossConfig{}, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pair 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train({}, EmbedConfig{}, ReconConfig{}, LossConfig{}, c), Error);
}

TEST(Train, SmokeLossDecreases) {
  auto data = corpus(50, 64, 100);
  TrainConfig c;
  c.epochs = 30;
  c.warmup_epochs = 3;
  auto st = train(data, EmbedConfig{}, ReconConfig{}, LossConfig{}, c);
  ASSERT_EQ(st.log.size(), 30u);
  for (const auto& e : st.log) EXPECT_TRUE(std::isfinite(e.mean_loss));
  EXPECT_LT(st.log.back().mean_loss, st.log.front().mean_loss);
}

TEST(Train, CrossOnlyLossFallsOverFirstEpochs) {
  std::vector<ShapePair> data;
  for (std::size_t i = 0; i < 20; ++i) data.push_back(gen_pair(i % 2 ? BaseShape::Torus : BaseShape::Sphere, 64, 0.15, i));
  LossConfig l;
  l.lambda_self = l.lambda_reg = 0.0;
  TrainConfig c;
  c.epochs = 30;
  c.warmup_epochs = 3;
  TrainState st;
  st.params = init_params(EmbedConfig{});
  st.adam = AdamState::fresh(st.params.tensors);
  struct Stop {};
  try {
    train_continue(st, data, ReconConfig{}, l, c, [](const TrainState& s) {
      if (s.epoch == 5) throw Stop{};
    });
  } catch (const Stop&) {
  }
  ASSERT_EQ(st.log.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(st.log[e].mean_loss, st.log[e - 1].mean_loss) << "epoch " << e + 1;
}
