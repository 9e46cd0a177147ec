#include <gtest/gtest.h>

#include "caformer/errors.hpp"
#include "caformer/head.hpp"
#include "caformer/pipeline.hpp"
#include "support/oracles.hpp"

namespace caformer {
namespace {

HeadParams random_head(Index in, Index hidden, std::mt19937_64& rng) {
  const auto branch = [&](Index out) {
    return HeadBranch{oracle::random_matrix(in, hidden, rng, 0.3), oracle::random_matrix(1, hidden, rng),
                      oracle::random_matrix(hidden, out, rng, 0.3), oracle::random_matrix(1, out, rng)};
  };
  return {branch(1), branch(2), branch(2)};
}

ScoreMaps maps_with_peak(Index side, Index pi, Index pj) {
  ScoreMaps m;
  m.side = side;
  m.score = TokenMatrix::Constant(side, side, 0.1);
  m.score(pi, pj) = 0.9;
  m.offset = TokenMatrix::Zero(side, 2 * side);
  m.size = TokenMatrix::Constant(side, 2 * side, 0.25);
  return m;
}

TEST(FuseAndFold, RgbChannelsFirstAndRowMajorCells) {
  const Index n_z = 2, side = 3, c = 2;
  TokenMatrix f_rgb(n_z + side * side, c), f_tir(n_z + side * side, c);
  for (Index r = 0; r < f_rgb.rows(); ++r) {
    f_rgb.row(r) << r, r + 0.5;
    f_tir.row(r) << -r, -r - 0.5;
  }
  const TokenMatrix fused = fuse_and_fold(f_rgb, f_tir, n_z, side);
  ASSERT_EQ(fused.rows(), 9);
  ASSERT_EQ(fused.cols(), 4);
  for (Index i = 0; i < side; ++i)
    for (Index j = 0; j < side; ++j) {
      const Index cell = i * side + j, src = n_z + cell;
      EXPECT_EQ(fused(cell, 0), static_cast<double>(src));
      EXPECT_EQ(fused(cell, 1), src + 0.5);
      EXPECT_EQ(fused(cell, 2), -static_cast<double>(src));
      EXPECT_EQ(fused(cell, 3), -src - 0.5);
    }
  EXPECT_THROW(fuse_and_fold(f_rgb.topRows(10), f_tir.topRows(10), n_z, side), ContractViolation);
}

TEST(FuseAndFold, BijectiveOnSearchRows) {
  std::mt19937_64 rng(1);
  const TokenMatrix f_rgb = oracle::random_matrix(4 + 16, 3, rng);
  const TokenMatrix f_tir = oracle::random_matrix(4 + 16, 3, rng);
  const TokenMatrix fused = fuse_and_fold(f_rgb, f_tir, 4, 4);
  EXPECT_EQ(fused.leftCols(3), f_rgb.bottomRows(16));
  EXPECT_EQ(fused.rightCols(3), f_tir.bottomRows(16));
}

TEST(Predict, MatchesPerCellOracle) {
  std::mt19937_64 rng(2);
  const Index side = 4, in = 6;
  const HeadParams p = random_head(in, 5, rng);
  const TokenMatrix features = oracle::random_matrix(side * side, in, rng);
  const ScoreMaps maps = predict(features, side, p);
  for (Index i = 0; i < side; ++i)
    for (Index j = 0; j < side; ++j) {
      const Index cell = i * side + j;
      const auto s = oracle::head_cell(features, cell, p.score);
      const auto o = oracle::head_cell(features, cell, p.offset);
      const auto z = oracle::head_cell(features, cell, p.size);
      EXPECT_NEAR(maps.score(i, j), s[0], 1e-12);
      EXPECT_NEAR(maps.offset_x(i, j), o[0], 1e-12);
      EXPECT_NEAR(maps.offset_y(i, j), o[1], 1e-12);
      EXPECT_NEAR(maps.width(i, j), z[0], 1e-12);
      EXPECT_NEAR(maps.height(i, j), z[1], 1e-12);
    }
}

TEST(Predict, ZeroFeaturesAndZeroFinalBiasGiveHalfScore) {
  std::mt19937_64 rng(3);
  HeadParams p = random_head(4, 3, rng);
  p.score.b1.setZero();
  p.score.b2.setZero();
  const ScoreMaps maps = predict(TokenMatrix::Zero(9, 4), 3, p);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(maps.score(i, j), 0.5);
}

TEST(Predict, CellsAreIndependent) {
  std::mt19937_64 rng(4);
  const HeadParams p = random_head(4, 3, rng);
  TokenMatrix features = oracle::random_matrix(9, 4, rng);
  const ScoreMaps before = predict(features, 3, p);
  features.row(4) = oracle::random_matrix(1, 4, rng);
  const ScoreMaps after = predict(features, 3, p);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      const bool touched = i == 1 && j == 1;
      EXPECT_EQ(before.score(i, j) == after.score(i, j), !touched);
      EXPECT_EQ(before.width(i, j) == after.width(i, j), !touched);
    }
}

TEST(Decode, SinglePeakArithmetic) {
  const BBox b = decode(maps_with_peak(8, 2, 3));
  EXPECT_DOUBLE_EQ(b.cx, 0.375);
  EXPECT_DOUBLE_EQ(b.cy, 0.25);
  EXPECT_DOUBLE_EQ(b.w, 0.25);
  EXPECT_DOUBLE_EQ(b.h, 0.25);
}

TEST(Decode, UniformScorePicksFirstCell) {
  ScoreMaps m = maps_with_peak(5, 0, 0);
  m.score.setConstant(0.3);
  m.offset.setConstant(0.5);
  const BBox b = decode(m);
  EXPECT_DOUBLE_EQ(b.cx, 0.1);
  EXPECT_DOUBLE_EQ(b.cy, 0.1);
}

TEST(Decode, InvariantToMonotoneRescalingAndAlwaysValid) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const HeadParams p = random_head(4, 3, rng);
    ScoreMaps m = predict(oracle::random_matrix(36, 4, rng), 6, p);
    const BBox b = decode(m);
    EXPECT_GE(b.cx, 0.0);
    EXPECT_LE(b.cx, 1.0);
    EXPECT_GE(b.cy, 0.0);
    EXPECT_LE(b.cy, 1.0);
    EXPECT_GT(b.w, 0.0);
    EXPECT_LE(b.w, 1.0);
    EXPECT_GT(b.h, 0.0);
    EXPECT_LE(b.h, 1.0);
    m.score = m.score.unaryExpr([](double s) { return std::pow(s, 3.0) * 7.0 + 1.0; });
    EXPECT_EQ(decode(m), b);
  }
}

TEST(Iou, HandCases) {
  const BBox a{0.5, 0.5, 0.2, 0.4};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BBox{0.9, 0.9, 0.1, 0.1}), 0.0);
  const BBox left{0.25, 0.5, 0.5, 1.0}, shifted{0.5, 0.5, 0.5, 1.0};
  EXPECT_NEAR(iou(left, shifted), 1.0 / 3.0, 1e-15);
}

TEST(Iou, SymmetricOnRandomBoxes) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const BBox a{u(rng), u(rng), u(rng) / 2, u(rng) / 2}, b{u(rng), u(rng), u(rng) / 2, u(rng) / 2};
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
    EXPECT_EQ(iou(a, a), 1.0);
  }
}

TEST(PrecisionSuccess, PerfectAndDisjointPredictions) {
  const std::vector<BBox> truth{{0.5, 0.5, 0.2, 0.2}, {0.3, 0.3, 0.1, 0.2}};
  const TrackingScores perfect = precision_success(truth, truth, 256.0);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.success, 1.0);
  const std::vector<BBox> far{{0.9, 0.9, 0.05, 0.05}, {0.9, 0.1, 0.05, 0.05}};
  const TrackingScores miss = precision_success(far, truth, 256.0);
  EXPECT_EQ(miss.precision, 0.0);
  EXPECT_EQ(miss.success, 0.0);
  EXPECT_THROW(precision_success(far, {truth[0]}, 256.0), UsageError);
}

TEST(PrecisionSuccess, TwentyPixelThreshold) {
  const std::vector<BBox> truth{{0.5, 0.5, 0.2, 0.2}};
  const std::vector<BBox> near{{0.5 + 20.0 / 256.0, 0.5, 0.2, 0.2}};
  const std::vector<BBox> beyond{{0.5 + 21.0 / 256.0, 0.5, 0.2, 0.2}};
  EXPECT_EQ(precision_success(near, truth, 256.0).precision, 1.0);
  EXPECT_EQ(precision_success(beyond, truth, 256.0).precision, 0.0);
}

TEST(PrecisionSuccess, ThreeFrameHandCase) {
  // IoUs 1, 1/3 and 0; centre errors 0, 32 px and 76.8 px at scale 128.
  const std::vector<BBox> truth{{0.5, 0.5, 0.2, 0.2}, {0.25, 0.5, 0.5, 1.0}, {0.2, 0.2, 0.1, 0.1}};
  const std::vector<BBox> pred{{0.5, 0.5, 0.2, 0.2}, {0.5, 0.5, 0.5, 1.0}, {0.8, 0.2, 0.1, 0.1}};
  const TrackingScores s = precision_success(pred, truth, 128.0);
  EXPECT_DOUBLE_EQ(s.precision, 1.0 / 3.0);
  double auc = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double threshold = 0.05 * t;
    auc += ((1.0 > threshold) + (1.0 / 3.0 > threshold) + (0.0 > threshold)) / 3.0;
  }
  EXPECT_NEAR(s.success, auc / 20.0, 1e-15);
  EXPECT_NEAR(s.success, (20.0 + 7.0) / 60.0, 1e-15);
}

}  // namespace
}  // namespace caformer
