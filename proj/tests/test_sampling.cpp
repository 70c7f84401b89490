#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "istapp/sampling.hpp"
#include "support/oracles.hpp"

using namespace istapp;
using istapp::testing::random_tensor;

TEST(MeasurementCount, RoundsRatioTimesN) {
  EXPECT_EQ(measurement_count(32, 0.1), 102u);
  EXPECT_EQ(measurement_count(32, 0.5), 512u);
  EXPECT_EQ(measurement_count(16, 0.1), 26u);
  EXPECT_EQ(measurement_count(4, 1.0), 16u);
  EXPECT_EQ(measurement_count(4, 0.01), 1u);
}

TEST(MakeOperator, ShapesFollowBlockAndRatio) {
  const SamplingOperator op = make_operator(8, 0.25, 3);
  EXPECT_EQ(op.measurements, 16u);
  EXPECT_EQ(op.phi.shape(), (Shape{16, 64}));
  EXPECT_EQ(op.w_phi.shape(), (Shape{16, 1, 8, 8}));
  EXPECT_EQ(op.w_phi_t.shape(), (Shape{64, 16, 1, 1}));
}

TEST(MakeOperator, SameSeedSameMatrix) {
  EXPECT_EQ(make_operator(8, 0.3, 42).phi, make_operator(8, 0.3, 42).phi);
  EXPECT_NE(make_operator(8, 0.3, 42).phi, make_operator(8, 0.3, 43).phi);
}

TEST(MakeOperator, EntriesHaveVarianceOneOverN) {
  const SamplingOperator op = make_operator(32, 0.5, 5);
  double sum = 0.0, sq = 0.0;
  for (double v : op.phi.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(op.phi.size());
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 5e-4);
  EXPECT_NEAR(var * 1024.0, 1.0, 0.02);
}

TEST(MakeOperator, RejectsBadArguments) {
  EXPECT_THROW(make_operator(1, 0.5, 0), DomainError);
  EXPECT_THROW(make_operator(8, 0.0, 0), DomainError);
  EXPECT_THROW(make_operator(8, 1.5, 0), DomainError);
  EXPECT_THROW(make_operator(8, std::nan(""), 0), DomainError);
}

TEST(MakeOperator, OrthonormalRowsAtFullRatio) {
  const SamplingOperator op = make_operator(4, 1.0, 9, true);
  const std::size_t N = 16;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < N; ++k) d += op.phi[i * N + k] * op.phi[j * N + k];
      EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-13);
    }
}

TEST(RatioSet, SeedsAreOffsetFromMaster) {
  const auto set = make_ratio_set(8, {0.1, 0.3}, 100);
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set[0].seed, 100u);
  EXPECT_EQ(set[1].seed, 101u);
  EXPECT_EQ(set[1].phi, make_operator(8, 0.3, 101).phi);
}

TEST(Measure, SingleBlockIsMatrixVectorProduct) {
  const SamplingOperator op = make_operator(4, 0.5, 1);
  const Tensor x = random_tensor({1, 4, 4}, 2);
  const Tensor y = measure(op, x);
  ASSERT_EQ(y.shape(), (Shape{8, 1, 1}));
  const auto ref = istapp::testing::matvec(op.phi, std::vector<double>(x.data().begin(), x.data().end()));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y[i], ref[i], 1e-14);
}

TEST(Measure, MatchesBlockwiseOracle) {
  std::mt19937_64 rng(3);
  for (std::size_t B : {4u, 8u}) {
    const SamplingOperator op = make_operator(B, 0.3, rng());
    const Tensor x = random_tensor({1, 3 * B, 2 * B}, rng());
    const Tensor got = measure(op, x);
    EXPECT_LE(max_abs_diff(got, istapp::testing::blockwise_measure(op.phi, x, B)), 1e-12);
    const Tensor back = init_transpose(op, got);
    EXPECT_LE(max_abs_diff(back, istapp::testing::blockwise_transpose(op.phi, got, B)), 1e-12);
  }
}

TEST(Measure, AdjointIdentity) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const SamplingOperator op = make_operator(8, 0.1 * (1 + trial % 10), rng());
    const Tensor x = random_tensor({1, 16, 24}, rng());
    const Tensor y = random_tensor({op.measurements, 2, 3}, rng());
    const double lhs = dot(measure(op, x).data(), y.data());
    const double rhs = dot(x.data(), init_transpose(op, y).data());
    EXPECT_LE(std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)), 1e-10);
  }
}

TEST(Measure, OrthonormalFullRatioInitIsExact) {
  const SamplingOperator op = make_operator(8, 1.0, 6, true);
  const Tensor x = random_tensor({1, 16, 16}, 7, 0.0, 1.0);
  EXPECT_LE(max_abs_diff(init_transpose(op, measure(op, x)), x), 1e-12);
}

TEST(Measure, RejectsNonMultipleDimensions) {
  const SamplingOperator op = make_operator(8, 0.5, 1);
  EXPECT_THROW(measure(op, Tensor({1, 12, 16})), ShapeError);
  EXPECT_THROW(measure(op, Tensor({2, 16, 16})), ShapeError);
  EXPECT_THROW(init_transpose(op, Tensor({3, 2, 2})), ShapeError);
}

TEST(Lipschitz, MatchesLargestEigenvalueOfGram) {
  // Orthonormal rows: phi^T phi is a projection, so L = 1.
  EXPECT_NEAR(lipschitz_constant(make_operator(8, 0.4, 2, true)), 1.0, 1e-10);
  // Scaled identity.
  Tensor phi({4, 4});
  for (std::size_t i = 0; i < 4; ++i) phi[i * 4 + i] = 3.0;
  EXPECT_NEAR(lipschitz_constant(operator_from_matrix(2, 1.0, 0, phi)), 9.0, 1e-12);
}

TEST(OperatorFromMatrix, RejectsWrongWidth) {
  EXPECT_THROW(operator_from_matrix(4, 0.5, 0, Tensor({8, 15})), ShapeError);
  EXPECT_THROW(operator_from_matrix(4, 0.5, 0, Tensor({17, 16})), ShapeError);
}
