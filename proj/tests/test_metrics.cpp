#include <gtest/gtest.h>

#include <cmath>

#include "istapp/metrics.hpp"
#include "support/oracles.hpp"

using namespace istapp;
using istapp::testing::random_tensor;

TEST(Psnr, MseOfOneHundredthIsTwentyDb) {
  EXPECT_NEAR(psnr_from_mse(0.01).db, 20.0, 1e-12);
  const ImagePlane a({1, 2, 2}, 0.3), b({1, 2, 2}, 0.4);
  EXPECT_NEAR(psnr(a, b).db, 20.0, 1e-9);
}

TEST(Psnr, ZerosVersusOnesIsZeroDb) {
  const Psnr p = psnr(ImagePlane({1, 3, 3}, 0.0), ImagePlane({1, 3, 3}, 1.0));
  EXPECT_FALSE(p.infinite);
  EXPECT_EQ(p.db, 0.0);
}

TEST(Psnr, IdenticalImagesGiveInfiniteSentinel) {
  const ImagePlane a = random_tensor({1, 5, 5}, 1, 0.0, 1.0);
  const Psnr p = psnr(a, a);
  EXPECT_TRUE(p.infinite);
  EXPECT_TRUE(std::isfinite(p.db));
  EXPECT_EQ(p.to_string(), "inf");
}

TEST(Psnr, DependsOnlyOnDifference) {
  const ImagePlane x = random_tensor({1, 8, 8}, 2, 0.2, 0.6);
  const ImagePlane r = random_tensor({1, 8, 8}, 3, 0.2, 0.6);
  ImagePlane xs = x, rs = r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xs[i] += 0.25;
    rs[i] += 0.25;
  }
  EXPECT_NEAR(psnr(x, r).db, psnr(xs, rs).db, 1e-9);
}

TEST(Psnr, Ordering) {
  const Psnr inf{0.0, true}, a{20.0, false}, b{21.0, false};
  EXPECT_LT(a, inf);
  EXPECT_FALSE(inf < b);
  EXPECT_LT(a, b);
}

TEST(Psnr, RejectsShapeMismatch) {
  EXPECT_THROW(psnr(ImagePlane({1, 2, 2}), ImagePlane({1, 2, 3})), ShapeError);
}

TEST(BlockArtifact, ConstantImageIsZero) {
  EXPECT_EQ(block_artifact_score(ImagePlane({1, 16, 16}, 0.4), 8).raw, 0.0);
}

TEST(BlockArtifact, StepAtEveryBoundary) {
  // Checkerboard of flat blocks alternating 0 and 0.5: every straddling pair
  // differs by 0.5, every interior pair by 0.
  const std::size_t B = 4;
  ImagePlane img({1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) img.at(0, y, x) = ((y / B + x / B) % 2) * 0.5;
  EXPECT_NEAR(block_artifact_score(img, B).raw, 0.5, 1e-15);
}

TEST(BlockArtifact, LinearRampIsNearZero) {
  ImagePlane img({1, 32, 32});
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) img.at(0, y, x) = 0.01 * static_cast<double>(x) + 0.005 * static_cast<double>(y);
  EXPECT_LT(std::abs(block_artifact_score(img, 8).raw), 1e-3);
}

TEST(BlockArtifact, ClampedIsNonnegative) {
  // Smooth across boundaries but noisy inside gives a negative raw score.
  ImagePlane img({1, 8, 8});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.at(0, y, x) = (x % 4 == 1 || x % 4 == 2) ? 1.0 : 0.0;
  const BlockArtifactScore s = block_artifact_score(img, 4);
  EXPECT_LT(s.raw, 0.0);
  EXPECT_EQ(s.clamped(), 0.0);
}

TEST(BlockArtifact, SingleBlockHasNoBoundary) {
  EXPECT_EQ(block_artifact_score(random_tensor({1, 8, 8}, 4), 8).raw, 0.0);
}

TEST(BlockArtifact, RejectsNonMultiple) {
  EXPECT_THROW(block_artifact_score(ImagePlane({1, 10, 8}), 4), ShapeError);
}
