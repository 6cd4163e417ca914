#include <random>
#include <set>

#include <gtest/gtest.h>

#include "rirkit/core.hpp"
#include "test_util.hpp"

namespace rirkit {
namespace {

// Brute-force coverage count for every cell, independent of tile_patches.
Eigen::MatrixXi coverage(const Tiling& t) {
  Eigen::MatrixXi cov = Eigen::MatrixXi::Zero(t.rows, t.cols);
  for (const auto& pl : t.placements)
    for (int r = pl.row; r < std::min(t.rows, pl.row + t.grid.patch_height); ++r)
      for (int c = pl.col; c < std::min(t.cols, pl.col + t.grid.patch_width); ++c) ++cov(r, c);
  return cov;
}

TEST(TilePatches, ExactFitGivesSinglePatch) {
  Matrix m = testing::random_matrix(64, 64, 1);
  Tiling t = tile_patches(m, {64, 64, 64, 64});
  ASSERT_EQ(t.patches.size(), 1u);
  EXPECT_EQ(t.placements[0], (PatchPlacement{0, 0}));
  EXPECT_EQ(t.patches[0], m);
}

TEST(TilePatches, HalfOverlapRows) {
  Matrix m = testing::random_matrix(128, 64, 2);
  Tiling t = tile_patches(m, {64, 64, 32, 64});
  ASSERT_EQ(t.patches.size(), 3u);
  EXPECT_EQ(t.placements[0].row, 0);
  EXPECT_EQ(t.placements[1].row, 32);
  EXPECT_EQ(t.placements[2].row, 64);
}

TEST(TilePatches, UlaRirMatrixWithClampedWidth) {
  // Enumerate placements by r0 = 32 i while r0 + 64 <= 2048 (+1 overhang if needed).
  int expected = 0;
  for (int r0 = 0;; r0 += 32) {
    ++expected;
    if (r0 + 64 >= 2048) break;
  }
  EXPECT_EQ(expected, 63);

  Matrix m = testing::random_matrix(2048, 16, 3);
  Tiling t = tile_patches(m, {64, 64, 32, 32});
  EXPECT_EQ(t.grid.patch_width, 16);
  EXPECT_EQ(static_cast<int>(t.patches.size()), expected);
  EXPECT_GE(coverage(t).minCoeff(), 1);
  for (const auto& p : t.patches) {
    EXPECT_EQ(p.rows(), 64);
    EXPECT_EQ(p.cols(), 16);
  }
}

TEST(TilePatches, EmptyMatrixRejected) {
  EXPECT_THROW(tile_patches(Matrix(0, 4), {}), InvalidInput);
}

TEST(TilePatches, InvalidStrideRejected) {
  Matrix m = testing::random_matrix(10, 10, 4);
  EXPECT_THROW(tile_patches(m, {8, 8, 0, 4}), InvalidInput);
  EXPECT_THROW(tile_patches(m, {8, 8, 9, 4}), InvalidInput);
}

TEST(TilePatches, PadPolicies) {
  Matrix m(3, 1);
  m << 1, 2, 3;
  Tiling z = tile_patches(m, {5, 1, 5, 1, PadPolicy::zero});
  Tiling r = tile_patches(m, {5, 1, 5, 1, PadPolicy::reflect});
  Eigen::VectorXd ez(5), er(5);
  ez << 1, 2, 3, 0, 0;
  er << 1, 2, 3, 2, 1;
  EXPECT_EQ(Eigen::VectorXd(z.patches[0].col(0)), ez);
  EXPECT_EQ(Eigen::VectorXd(r.patches[0].col(0)), er);
}

TEST(UntilePatches, OverlapIsAveraged) {
  std::vector<Matrix> patches{Matrix::Constant(1, 2, 1.0), Matrix::Constant(1, 2, 3.0)};
  std::vector<PatchPlacement> pl{{0, 0}, {0, 1}};
  Matrix out = untile_patches(patches, pl, 1, 3);
  EXPECT_DOUBLE_EQ(out(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(out(0, 2), 3.0);
}

TEST(UntilePatches, PlacementOutsideShapeRejected) {
  std::vector<Matrix> patches{Matrix::Zero(2, 2)};
  EXPECT_THROW(untile_patches(patches, {{4, 0}}, 3, 3), InvalidInput);
  EXPECT_THROW(untile_patches(patches, {{-1, 0}}, 3, 3), InvalidInput);
}

TEST(UntilePatches, RoundTripPropertyOverRandomGrids) {
  std::mt19937 rng(7);
  Matrix m = testing::random_matrix(200, 16, 5);
  for (int trial = 0; trial < 50; ++trial) {
    PatchGrid g;
    g.patch_height = std::uniform_int_distribution<int>(1, 80)(rng);
    g.patch_width = std::uniform_int_distribution<int>(1, 24)(rng);
    g.stride_rows = std::uniform_int_distribution<int>(1, g.patch_height)(rng);
    g.stride_cols = std::uniform_int_distribution<int>(1, g.patch_width)(rng);
    g.pad = trial % 2 ? PadPolicy::zero : PadPolicy::reflect;
    Tiling t = tile_patches(m, g);
    ASSERT_GE(coverage(t).minCoeff(), 1) << "trial " << trial;
    Matrix back = untile_patches(t);
    EXPECT_LT((back - m).cwiseAbs().maxCoeff(), 1e-12) << "trial " << trial;
  }
}

TEST(NormalizePatch, EndpointsMapToUnitRange) {
  Matrix p(2, 2);
  p << -3, 0, 5, 1;
  auto n = normalize_patch(p);
  EXPECT_DOUBLE_EQ(n.scale.offset, 1.0);
  EXPECT_DOUBLE_EQ(n.scale.gain, 4.0);
  EXPECT_DOUBLE_EQ(n.patch(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(n.patch(0, 0), -1.0);
}

TEST(NormalizePatch, ConstantPatchUsesGainFloor) {
  auto n = normalize_patch(Matrix::Zero(4, 4));
  EXPECT_EQ(n.patch, Matrix::Zero(4, 4));
  EXPECT_EQ(n.scale.gain, kGainFloor);
}

TEST(NormalizePatch, RoundTripProperty) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    Matrix p = testing::random_matrix(64, 16, seed) * std::pow(10.0, static_cast<int>(seed % 7) - 3);
    auto n = normalize_patch(p);
    EXPECT_LE(n.patch.cwiseAbs().maxCoeff(), 1.0 + 1e-15);
    Matrix back = denormalize_patch(n.patch, n.scale);
    EXPECT_LT((back - p).cwiseAbs().maxCoeff() / p.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NormalizePatch, KnownColumnsDefineRange) {
  Matrix p(2, 3);
  p << 0, 10, 2, 1, -10, 3;
  auto n = normalize_patch(p, {true, false, true});
  EXPECT_DOUBLE_EQ(n.scale.offset, 1.5);
  EXPECT_DOUBLE_EQ(n.scale.gain, 1.5);
  EXPECT_GT(n.patch(0, 1), 1.0);
}

TEST(MicMask, Counts) {
  MicMask m = MicMask::from_missing(16, {3, 7, 10, 14});
  EXPECT_EQ(m.measured_count(), 12);
  EXPECT_EQ(m.missing_count(), 4);
  EXPECT_EQ(m.missing_indices(), (std::vector<int>{3, 7, 10, 14}));
  EXPECT_THROW(MicMask(std::vector<bool>(4, false)), InvalidInput);
}

}  // namespace
}  // namespace rirkit
