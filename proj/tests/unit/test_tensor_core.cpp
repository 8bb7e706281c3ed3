#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "bdlab/errors.hpp"
#include "bdlab/graph.hpp"
#include "bdlab/linalg.hpp"
#include "bdlab/ops.hpp"
#include "bdlab/optim.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace bdlab;

namespace {

using gradcheck::random_tensor;

}  // namespace

TEST(Ops, ReluForward) {
  Graph g;
  auto y = ops::relu(g.constant(Tensor({3}, {-1, 0, 2})));
  EXPECT_EQ(y.value().vec(), (std::vector<double>{0, 0, 2}));
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  const auto p = ops::softmax_rows(Tensor({1, 4}, 0.0));
  for (double v : p.vec()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, SoftmaxRowsArePositiveAndSumToOne) {
  std::mt19937_64 gen(3);
  const auto p = ops::softmax_rows(random_tensor({5, 7}, gen, -30, 30));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(p[r * 7 + c], 0.0);
      s += p[r * 7 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ops, ConvOfOnesGivesNines) {
  Graph g;
  auto y = ops::conv2d(g.constant(Tensor({1, 1, 5, 5}, 1.0)), g.constant(Tensor({1, 1, 3, 3}, 1.0)),
                       g.constant(Tensor({1}, 0.0)));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.value().vec()) EXPECT_DOUBLE_EQ(v, 9.0);
}

TEST(Ops, ConvMatchesDirectLoop) {
  std::mt19937_64 gen(11);
  const auto x = random_tensor({1, 1, 7, 6}, gen);
  const auto k = random_tensor({1, 1, 3, 3}, gen);
  Graph g;
  auto y = ops::conv2d(g.constant(x), g.constant(k), g.constant(Tensor({1}, 0.0)));
  const auto ref = oracle::conv_valid(x.vec(), 7, 6, k.vec(), 3, 3);
  ASSERT_EQ(y.value().size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
}

TEST(Ops, ForwardIsDeterministic) {
  std::mt19937_64 gen(5);
  const auto x = random_tensor({2, 3, 6, 6}, gen);
  const auto w = random_tensor({4, 3, 3, 3}, gen);
  auto run = [&] {
    Graph g;
    auto h = ops::conv2d(g.constant(x), g.constant(w), g.constant(Tensor({4}, 0.1)), 1);
    return ops::dropout(ops::relu(h), 0.3, 42, true).value().vec();
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, LinearGradientIsInput) {
  Parameter w("w", Tensor({3}, {0.5, -1.0, 2.0}));
  Graph g;
  const Tensor x({3}, {1.0, 2.0, 3.0});
  g.backward(ops::sum(ops::mul(g.param(w), g.constant(x))));
  EXPECT_EQ(w.grad.vec(), x.vec());
}

TEST(Backward, SoftmaxCrossEntropyGradientIsPMinusY) {
  Parameter z("z", Tensor({1, 2}, 0.0));
  Graph g;
  const int target = 0;
  g.backward(ops::cross_entropy(g.param(z), std::span<const int>(&target, 1)));
  EXPECT_NEAR(z.grad[0], -0.5, 1e-12);
  EXPECT_NEAR(z.grad[1], 0.5, 1e-12);
}

TEST(Backward, SecondCallWithoutResetIsStale) {
  Parameter w("w", Tensor({2}, 1.0));
  Graph g;
  auto loss = ops::sum(g.param(w));
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), GraphError);
  g.reset();
  w.zero_grad();
  g.backward(ops::sum(g.param(w)));
  EXPECT_DOUBLE_EQ(w.grad[0], 1.0);
}

TEST(Backward, FrozenParameterGetsNoGradient) {
  Parameter w("w", Tensor({2}, 1.0));
  w.trainable = false;
  Parameter b("b", Tensor({2}, 1.0));
  Graph g;
  g.backward(ops::sum(ops::mul(g.param(w), g.param(b))));
  EXPECT_EQ(w.grad.vec(), (std::vector<double>{0, 0}));
  EXPECT_EQ(b.grad.vec(), (std::vector<double>{1, 1}));
}

// Every op is checked against central differences on randomized shapes.
TEST(Backward, MatchesFiniteDifferencesOnFiftyOpInstances) {
  const auto r = gradcheck::run(2024, 50);
  EXPECT_EQ(r.instances, 50);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Optim, SgdStep) {
  Parameter w("w", Tensor({1}, 1.0));
  w.grad[0] = 2.0;
  Sgd(SgdConfig{0.1}).step({&w});
  EXPECT_DOUBLE_EQ(w.value[0], 0.8);
  EXPECT_DOUBLE_EQ(w.grad[0], 0.0);
}

TEST(Optim, SgdZeroGradientLeavesWeights) {
  Parameter w("w", Tensor({3}, {1, 2, 3}));
  Sgd(SgdConfig{0.5}).step({&w});
  EXPECT_EQ(w.value.vec(), (std::vector<double>{1, 2, 3}));
}

TEST(Optim, AdamFirstStepMovesByLearningRate) {
  for (double g : {-3.0, 0.01, 250.0}) {
    Parameter w("w", Tensor({1}, 0.0));
    w.grad[0] = g;
    Adam(AdamConfig{.lr = 0.01}).step({&w});
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(w.value[0], -0.01 * g / (std::abs(g) + 1e-8), 1e-12);
  }
}

TEST(Optim, NonPositiveLearningRateIsConfigError) {
  EXPECT_THROW(Sgd(SgdConfig{0.0}), ConfigError);
  EXPECT_THROW(Adam(AdamConfig{.lr = -1.0}), ConfigError);
}

TEST(PowerIteration, Diagonal) {
  Eigen::MatrixXd a(2, 2);
  a << 2, 0, 0, 1;
  const auto e = power_iteration(a);
  EXPECT_NEAR(e.value, 2.0, 1e-9);
  EXPECT_NEAR(e.vector(0), 1.0, 1e-9);
  EXPECT_NEAR(e.vector(1), 0.0, 1e-9);
}

TEST(PowerIteration, IdentityFollowsSignRule) {
  const auto e = power_iteration(Eigen::MatrixXd::Identity(4, 4));
  EXPECT_NEAR(e.value, 1.0, 1e-12);
  EXPECT_NEAR(e.vector.norm(), 1.0, 1e-12);
  for (int i = 0; i < 4; ++i)
    if (std::abs(e.vector(i)) > 1e-12) {
      EXPECT_GT(e.vector(i), 0.0);
      break;
    }
}

TEST(PowerIteration, MatchesJacobiOnTwentyRandomMatrices) {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + trial % 6;
    Eigen::MatrixXd b(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) b(i, j) = nd(gen);
    const Eigen::MatrixXd a = b.transpose() * b;
    oracle::Matrix m(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m[i][j] = a(i, j);
    const auto ref = oracle::jacobi(m);
    const auto e = power_iteration(a);
    EXPECT_NEAR(e.value, ref.values[0], 1e-6 * ref.values[0]) << "trial " << trial;
    double dot = 0;
    for (int i = 0; i < n; ++i) dot += e.vector(i) * ref.vectors[i][0];
    const double sign = dot < 0 ? -1.0 : 1.0;
    for (int i = 0; i < n; ++i) EXPECT_NEAR(e.vector(i), sign * ref.vectors[i][0], 1e-6) << "trial " << trial;
    EXPECT_LE((a * e.vector - e.value * e.vector).norm(), 1e-6 * e.value);
  }
}

TEST(PowerIteration, ReportsNonConvergence) {
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 0.0, 0.0, 0.5;
  PowerIterationOptions o;
  o.max_iterations = 2;
  o.accept_tolerance = 1e-14;
  o.tolerance = 1e-14;
  Eigen::MatrixXd r(2, 2);
  r << 1, 1, 1, -1;
  r /= std::sqrt(2.0);
  EXPECT_THROW(power_iteration(r * a * r.transpose(), o), ConvergenceError);
}
