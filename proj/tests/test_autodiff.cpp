#include <gtest/gtest.h>

#include "istapp/autodiff.hpp"
#include "istapp/gradcheck.hpp"
#include "istapp/ops.hpp"
#include "support/oracles.hpp"

using namespace istapp;

TEST(Backward, SquareAtThree) {
  Parameter x{"x", Tensor::scalar(3.0)};
  Graph g;
  const Var xv = g.parameter(x);
  g.backward(ops::mul(xv, xv));
  EXPECT_EQ(x.grad[0], 6.0);
}

TEST(Backward, FanOutAccumulates) {
  Parameter x{"x", Tensor::scalar(1.0)};
  Graph g;
  const Var xv = g.parameter(x);
  g.backward(ops::add(xv, xv));
  EXPECT_EQ(x.grad[0], 2.0);
}

TEST(Backward, GradientsAccumulateAcrossGraphs) {
  Parameter x{"x", Tensor::scalar(2.0)};
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(ops::mul_const(g.parameter(x), 3.0));
  }
  EXPECT_EQ(x.grad[0], 6.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Parameter x{"x", Tensor({2}, 1.0)};
  Graph g;
  EXPECT_THROW(g.backward(ops::relu(g.parameter(x))), GraphError);
}

TEST(Backward, RejectsSecondBackward) {
  Parameter x{"x", Tensor::scalar(1.0)};
  Graph g;
  const Var loss = ops::sum(g.parameter(x));
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), GraphError);
  EXPECT_THROW(ops::add(loss, loss), GraphError);
}

TEST(Backward, RejectsMixedGraphs) {
  Parameter x{"x", Tensor::scalar(1.0)};
  Graph g1, g2;
  EXPECT_THROW(ops::add(g1.parameter(x), g2.parameter(x)), GraphError);
}

TEST(Graph, InputsPrecedeNodes) {
  Parameter x{"x", istapp::testing::random_tensor({1, 4, 4}, 1)};
  Parameter k{"k", istapp::testing::random_tensor({2, 1, 3, 3}, 2)};
  Graph g;
  const Var y = ops::relu(ops::conv2d(g.parameter(x), g.parameter(k), std::nullopt, 1, 1));
  ops::sum_squares(y);
  for (std::size_t n = 0; n < g.size(); ++n) {
    for (std::ptrdiff_t in : g.inputs(n)) {
      if (in >= 0) {
        EXPECT_LT(static_cast<std::size_t>(in), n);
      }
    }
  }
}

TEST(Graph, InferenceModeRecordsNothing) {
  Parameter x{"x", Tensor::scalar(3.0)};
  Graph g(Graph::Mode::inference);
  const Var y = ops::mul(g.parameter(x), g.parameter(x));
  EXPECT_FALSE(y.tracked());
  EXPECT_EQ(g.size(), 0u);
  EXPECT_EQ(y.value()[0], 9.0);
}

TEST(Backward, ConvSumMatchesFiniteDifferences) {
  Parameter x{"x", istapp::testing::random_tensor({2, 5, 5}, 3)};
  Parameter k{"k", istapp::testing::random_tensor({3, 2, 3, 3}, 4)};
  auto loss = [&](Graph& g) { return ops::sum(ops::conv2d(g.parameter(x), g.parameter(k), std::nullopt, 1, 1)); };
  gradcheck::Options opt;
  opt.max_probes = 1000;  // every coordinate
  const auto r = gradcheck::check("sum(conv2d)", {&x, &k}, loss, opt);
  EXPECT_EQ(r.probes, x.value.size() + k.value.size());
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(Backward, ConvSumGradientIsAdjointOfOnes) {
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{3, 2}}) {
    Parameter x{"x", istapp::testing::random_tensor({3, 9, 9}, 5)};
    const Tensor k = istapp::testing::random_tensor({4, 3, 3, 3}, 6);
    Graph g;
    const Var out = ops::conv2d(g.parameter(x), Var(k), std::nullopt, stride, pad);
    const Tensor ones(out.shape(), 1.0);
    g.backward(ops::sum(out));
    const Tensor adj = istapp::testing::naive_conv2d_adjoint(ones, k, 9, 9, static_cast<std::size_t>(stride),
                                                             static_cast<std::size_t>(pad));
    EXPECT_LE(max_abs_diff(x.grad, adj), 1e-12) << "stride " << stride << " pad " << pad;
  }
}

TEST(Backward, SoftplusGradientMatchesCentralDifference) {
  for (double x0 : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
    Parameter x{"x", Tensor::scalar(x0)};
    Graph g;
    g.backward(ops::sum(ops::softplus(g.parameter(x))));
    const double h = 1e-5;
    const double fd = (ops::softplus(x0 + h) - ops::softplus(x0 - h)) / (2 * h);
    EXPECT_LE(std::abs(x.grad[0] - fd) / std::abs(fd), 1e-6) << "x=" << x0;
  }
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  Parameter x{"x", Tensor({3}, {-1.0, 0.0, 2.0})};
  Graph g;
  g.backward(ops::sum(ops::relu(g.parameter(x))));
  EXPECT_EQ(x.grad, Tensor({3}, {0.0, 0.0, 1.0}));
}

TEST(Backward, FullSuitePasses) {
  for (const auto& r : gradcheck::run_suite()) {
    EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_rel_error << " tol " << r.tolerance;
    EXPECT_GE(r.probes, r.name.rfind("end-to-end", 0) == 0 ? 50u : 100u) << r.name;
  }
}
