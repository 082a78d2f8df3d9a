#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lte/tensor.hpp"
#include "oracles.hpp"

using namespace lte;
using oracle::check_gradients;
using oracle::random_tensor;

namespace {

void expect_values(const Tensor& t, std::vector<double> want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Tensor, RejectsSizeMismatchAndNonFinite) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
  EXPECT_THROW(Tensor({2}, {1.0, NAN}), Error);
  EXPECT_THROW(Tensor({1}, {INFINITY}), Error);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6, 0.5)));
}

TEST(Tensor, MatmulIdentity) {
  Tensor a = Tensor::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}});
  EXPECT_EQ(matmul(Tensor::eye(3), a).values(), a.values());
}

TEST(Tensor, LogsumexpOfConstant) {
  const double c = 2.5;
  expect_values(logsumexp(Tensor::vector({c, c, c}), 0), {c + std::log(3.0)});
  expect_values(logsumexp(Tensor::vector({1000.0, 1000.0})), {1000.0 + std::log(2.0)});
}

TEST(Tensor, GradientOfSumOfSquares) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2, 3}));
  auto g = tape.backward(sum(square(x)));
  expect_values(g.wrt(x), {2, 4, 6});
}

TEST(Tensor, GradientOfProduct) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(3)), y = tape.leaf(Tensor::scalar(5));
  auto g = tape.backward(x * y);
  expect_values(g.wrt(x), {5});
  expect_values(g.wrt(y), {3});
}

TEST(Tensor, LogsumexpGradientIsSoftmax) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({0.3, -1.2, 2.0, 0.7}));
  auto g = tape.backward(logsumexp(x, 0));
  double z = 0.0;
  for (double v : x.values()) z += std::exp(v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g.wrt(x)[i], std::exp(x[i]) / z, 1e-14);
}

TEST(Tensor, UntouchedLeafGetsZeros) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2})), unused = tape.leaf(Tensor::vector({3, 4, 5}));
  auto g = tape.backward(sum(x));
  expect_values(g.wrt(unused), {0, 0, 0});
  EXPECT_FALSE(g.touched(unused));
}

TEST(Tensor, BackwardErrors) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), Error);
  EXPECT_THROW(tape.backward(sum(Tensor::vector({1, 2}))), Error);
  Tape other;
  Tensor y = other.leaf(Tensor::vector({1}));
  EXPECT_THROW(x + y, Error);
}

TEST(Tensor, ShapeMismatchNamesBothShapesAndOp) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({4}));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
}

TEST(Tensor, BroadcastAlignsTrailingDimensions) {
  Tensor a = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(a + Tensor::vector({10, 20, 30}), {11, 22, 33, 14, 25, 36});
  expect_values(a * Tensor({2, 1}, {2, -1}), {2, 4, 6, -4, -5, -6});
  expect_values(broadcast_to(Tensor::vector({1, 2}), {3, 2}), {1, 2, 1, 2, 1, 2});
}

TEST(Tensor, ReductionsAndMax) {
  Tensor a = Tensor({2, 3}, {1, 5, 3, 4, 2, 6});
  expect_values(sum(a, 0), {5, 7, 9});
  expect_values(sum(a, 1), {9, 12});
  expect_values(mean(a), {3.5});
  auto m = max(a, 1);
  expect_values(m.values, {5, 6});
  EXPECT_EQ(m.argmax, (std::vector<std::size_t>{1, 2}));
  auto tie = max(Tensor::vector({2, 7, 7}), 0);
  EXPECT_EQ(tie.argmax[0], 1u);
}

TEST(Tensor, ConcatTransposeGather) {
  Tensor a = Tensor({2, 2}, {1, 2, 3, 4}), b = Tensor({2, 1}, {9, 8});
  expect_values(concat({a, b}, 1), {1, 2, 9, 3, 4, 8});
  expect_values(concat({a, Tensor({1, 2}, {5, 6})}, 0), {1, 2, 3, 4, 5, 6});
  expect_values(transpose(a), {1, 3, 2, 4});
  const std::vector<std::size_t> idx{1, 1, 0};
  expect_values(gather_rows(a, idx), {3, 4, 3, 4, 1, 2});
}

TEST(LinearSolve, IdentityAndDiagonal) {
  Tensor b = Tensor({3, 1}, {1, -2, 3});
  expect_values(linear_solve(Tensor::eye(3), b), {1, -2, 3});
  expect_values(linear_solve(Tensor::matrix({{2, 0}, {0, 4}}), Tensor({2, 1}, {2, 4})), {1, 1});
}

TEST(LinearSolve, ResidualIsTiny) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor A = oracle::random_spd(rng, 6);
    Tensor B = random_tensor(rng, {6, 3});
    Tensor X = linear_solve(A, B);
    Tensor R = matmul(A, X) - B;
    EXPECT_LE(oracle::norm(R.values()), 1e-10 * oracle::norm(B.values()));
  }
}

TEST(LinearSolve, ErrorsOnNonSpdWithIndex) {
  std::vector<double> g(2 * 4, 0.0);
  g[0] = 1, g[3] = 1;        // batch 0: identity
  g[4] = 1, g[7] = -1;       // batch 1: indefinite
  try {
    linear_solve(Tensor({2, 2, 2}, g), Tensor::ones({2, 2, 1}));
    FAIL() << "expected an error";
  } catch (const SolveError& e) {
    EXPECT_EQ(e.index, 1u);
  }
}

TEST(LinearSolve, AdjointMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor A = oracle::random_spd(rng, 5);
    Tensor B = random_tensor(rng, {5, 2});
    Tensor W = random_tensor(rng, {5, 2});
    auto f = [&](const std::vector<Tensor>& in) { return sum(linear_solve(in[0], in[1]) * W); };
    EXPECT_LT(check_gradients(f, {A, B}).rel, 1e-6);
  }
}

TEST(LinearSolve, BatchedAdjoint) {
  std::mt19937_64 rng(6);
  std::vector<double> a;
  for (int b = 0; b < 3; ++b) {
    auto m = oracle::random_spd(rng, 4).values();
    a.insert(a.end(), m.begin(), m.end());
  }
  Tensor A({3, 4, 4}, a);
  Tensor B = random_tensor(rng, {3, 4, 1});
  auto f = [](const std::vector<Tensor>& in) { return sum(square(linear_solve(in[0], in[1]))); };
  EXPECT_LT(check_gradients(f, {A, B}).rel, 1e-6);
}

// Every primitive against central finite differences on inputs in [-1, 1].
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4}), row = random_tensor(rng, {4});
  Tensor pos = random_tensor(rng, {3, 4}, 0.5, 1.5), w = random_tensor(rng, {3, 4});
  Tensor m = random_tensor(rng, {4, 2});
  Tensor b3a = random_tensor(rng, {2, 3, 4}), b3b = random_tensor(rng, {2, 4, 3});
  std::vector<std::size_t> idx{2, 0, 2, 1};
  using V = std::vector<Tensor>;
  struct Case {
    const char* name;
    oracle::TapeFn f;
    V in;
  };
  const std::vector<Case> cases = {
      {"add", [&](const V& x) { return sum((x[0] + x[1]) * w); }, {a, b}},
      {"sub", [&](const V& x) { return sum((x[0] - x[1]) * w); }, {a, b}},
      {"mul", [&](const V& x) { return sum(x[0] * x[1]); }, {a, b}},
      {"div", [&](const V& x) { return sum(x[0] / x[1]); }, {a, pos}},
      {"broadcast", [&](const V& x) { return sum((x[0] * x[1]) * w); }, {a, row}},
      {"broadcast_to", [&](const V& x) { return sum(broadcast_to(x[0], {3, 4}) * w); }, {row}},
      {"scale", [&](const V& x) { return sum(scale(x[0], -2.5) * w); }, {a}},
      {"exp", [&](const V& x) { return sum(exp(x[0]) * w); }, {a}},
      {"log", [&](const V& x) { return sum(log(x[0]) * w); }, {pos}},
      {"square", [&](const V& x) { return sum(square(x[0]) * w); }, {a}},
      {"sqrt", [&](const V& x) { return sum(sqrt(x[0]) * w); }, {pos}},
      {"neg", [&](const V& x) { return sum(-x[0] * w); }, {a}},
      {"leaky_relu", [&](const V& x) { return sum(leaky_relu(x[0], 0.2) * w); }, {a}},
      {"matmul", [&](const V& x) { return sum(square(matmul(x[0], x[1]))); }, {a, m}},
      {"batched_matmul", [&](const V& x) { return sum(square(matmul(x[0], x[1]))); }, {b3a, b3b}},
      {"transpose", [&](const V& x) { return sum(matmul(transpose(x[0]), x[1])); }, {a, b}},
      {"reshape", [&](const V& x) { return sum(square(reshape(x[0], {6, 2})) * reshape(w, {6, 2})); }, {a}},
      {"sum_axis", [&](const V& x) { return sum(square(sum(x[0], 0))) + sum(square(sum(x[0], 1, true))); }, {a}},
      {"mean_axis", [&](const V& x) { return sum(square(mean(x[0], 1))); }, {a}},
      {"max_axis", [&](const V& x) { return sum(square(max(x[0], 1).values)) + sum(max(x[0], 0).values); }, {a}},
      {"logsumexp_axis", [&](const V& x) { return sum(square(logsumexp(x[0], 1))) + logsumexp(x[0]); }, {a}},
      {"concat", [&](const V& x) { return sum(square(concat({x[0], x[1]}, 1))); }, {a, b}},
      {"gather_rows", [&](const V& x) { return sum(square(gather_rows(x[0], idx)) * reshape(concat({w, reshape(sum(w, 0), {1, 4})}, 0), {4, 4})); }, {a}},
      {"shared_consumer", [&](const V& x) { return sum(x[0] * x[0] * x[0]) + sum(exp(x[0]) * x[0]); }, {a}},
  };
  const auto& c = cases.at(static_cast<std::size_t>(GetParam()));
  const auto res = check_gradients(c.f, c.in);
  EXPECT_LT(res.rel, 1e-6) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::Range(0, 24));

TEST(Tensor, NodeWithTwoConsumersAccumulates) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({0.5, -1.5}));
  Tensor y = exp(x);
  auto g = tape.backward(sum(y * y) + sum(y));  // d/dx = 2 e^{2x} + e^x
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g.wrt(x)[i], 2 * std::exp(2 * x[i]) + std::exp(x[i]), 1e-12);
}
