// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "occworld/core/camera.hpp"
#include "occworld/core/ego_state.hpp"
#include "occworld/core/geometry.hpp"
#include "occworld/core/grids.hpp"
#include "occworld/core/occg.hpp"
#include "occworld/core/pose.hpp"
#include "occworld/core/rng.hpp"
#include "occworld/core/trilinear.hpp"

using namespace occworld;

namespace {

Pose random_pose(Rng& rng) {
  const Eigen::Vector3d axis =
      Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  const double angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
  Pose p;
  p.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  p.translation = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  return p;
}

double max_abs(const Mat4& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(GridGeometry, FirstVoxelBinning) {
  const GridGeometry g({4, 4, 4}, 0.4, Vec3(1.0, 2.0, 3.0));
  const auto v = world_to_voxel(g.origin() + Vec3(0.2, 0.2, 0.2), g);
  ASSERT_TRUE(v);
  EXPECT_EQ(*v, (VoxelIndex{0, 0, 0}));
}

TEST(GridGeometry, MaxCornerIsOutside) {
  const GridGeometry g({4, 5, 6}, 0.4, Vec3(1.0, 2.0, 3.0));
  EXPECT_FALSE(world_to_voxel(g.max_corner(), g));
  EXPECT_FALSE(world_to_voxel(g.origin() - Vec3(1e-9, 0, 0), g));
  EXPECT_TRUE(world_to_voxel(g.origin(), g));
}

TEST(GridGeometry, ReferenceEgoCenter) {
  const auto g = GridGeometry::reference();
  EXPECT_EQ(g.dims(), (GridDims{200, 200, 16}));
  const auto v = world_to_voxel(Vec3::Zero(), g);
  ASSERT_TRUE(v);
  EXPECT_EQ(*v, (VoxelIndex{100, 100, 2}));
}

TEST(GridGeometry, CenterRoundTripAllVoxels) {
  const GridGeometry g({7, 5, 3}, 0.37, Vec3(-1.3, 0.2, -0.9));
  for (std::size_t l = 0; l < g.voxel_count(); ++l) {
    const auto idx = g.unravel(l);
    EXPECT_EQ(g.linear_index(idx), l);
    const auto back = g.world_to_voxel(g.voxel_center(idx));
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, idx);
  }
}

TEST(GridGeometry, XFastestLayout) {
  const GridGeometry g({3, 4, 5}, 1.0, Vec3::Zero());
  EXPECT_EQ(g.linear_index({1, 0, 0}), 1u);
  EXPECT_EQ(g.linear_index({0, 1, 0}), 3u);
  EXPECT_EQ(g.linear_index({0, 0, 1}), 12u);
}

TEST(GridGeometry, RejectsInvalid) {
  EXPECT_THROW(GridGeometry({0, 1, 1}, 1.0, Vec3::Zero()), UsageError);
  EXPECT_THROW(GridGeometry({1, 1, 1}, 0.0, Vec3::Zero()), UsageError);
  EXPECT_THROW(GridGeometry({1, 1, 1}, -1.0, Vec3::Zero()), UsageError);
}

TEST(Pose, IdentityCompose) {
  Rng rng(1);
  const Pose a = random_pose(rng);
  const Pose c = compose(Pose::identity(), a);
  EXPECT_LT(max_abs(c.matrix() - a.matrix()), 1e-12);
}

TEST(Pose, PureTranslationInverse) {
  const Pose inv = inverse(Pose::from_translation(Vec3(1, 2, 3)));
  EXPECT_LT((inv.translation - Vec3(-1, -2, -3)).norm(), 1e-12);
  EXPECT_LT((inv.rotation - Mat3::Identity()).norm(), 1e-12);
}

TEST(Pose, GroupLawsMatchHomogeneousMatrices) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    EXPECT_LT(max_abs(compose(a, b).matrix() - a.matrix() * b.matrix()), 1e-9);
    EXPECT_LT(max_abs(compose(compose(a, b), c).matrix() -
                      compose(a, compose(b, c)).matrix()),
              1e-9);
    EXPECT_LT(max_abs(compose(a, inverse(a)).matrix() - Mat4::Identity()), 1e-6);
    EXPECT_TRUE(compose(a, b).is_valid());
    const Vec3 p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    EXPECT_LT((transform_point(compose(a, b), p) -
               transform_point(a, transform_point(b, p)))
                  .norm(),
              1e-6);
  }
}

TEST(Pose, ValidityChecks) {
  Pose p;
  p.rotation(0, 0) = -1.0;  // reflection
  EXPECT_FALSE(p.is_valid());
  p.rotation = 2.0 * Mat3::Identity();
  EXPECT_FALSE(p.is_valid());
}

TEST(CameraModel, ProjectUnprojectRoundTrip) {
  Rng rng(3);
  const auto cam = CameraModel::looking(0.3, 0.1, Vec3(0.5, 0.2, 1.5), 1.2, 64, 48);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const PixelCoord px{rng.uniform(0, 64), rng.uniform(0, 48)};
    const double depth = rng.uniform(0.5, 30.0);
    const Vec3 p = cam.unproject(px, depth);
    const auto proj = cam.project(p);
    ASSERT_TRUE(proj);
    EXPECT_NEAR(proj->pixel.u, px.u, 1e-6);
    EXPECT_NEAR(proj->pixel.v, px.v, 1e-6);
    EXPECT_LT((cam.unproject(proj->pixel, proj->depth) - p).norm(), 1e-5);
    ++checked;
  }
  EXPECT_EQ(checked, 500);
}

TEST(CameraModel, BehindAndOutside) {
  const auto cam = CameraModel::looking(0.0, 0.0, Vec3::Zero(), 1.0, 32, 32);
  EXPECT_FALSE(cam.project(Vec3(-5, 0, 0)));
  EXPECT_FALSE(cam.project(Vec3(1, 50, 0)));
  EXPECT_TRUE(cam.project(Vec3(5, 0, 0)));
  EXPECT_LT((cam.forward() - Vec3::UnitX()).norm(), 1e-12);
}

TEST(CameraModel, RejectsBadIntrinsics) {
  EXPECT_THROW(CameraModel({0.0, 1.0, 1.0, 1.0}, 4, 4, Pose{}), UsageError);
  EXPECT_THROW(CameraModel({1.0, 1.0, 5.0, 1.0}, 4, 4, Pose{}), UsageError);
  EXPECT_THROW(CameraModel({1.0, 1.0, 0.0, 1.0}, 4, 4, Pose{}), UsageError);
}

TEST(EgoState, ZeroStateHasZeroFeatures) {
  const auto z = EgoState::zero(3);
  EXPECT_EQ(z.history.size(), 3u);
  const auto f = z.features();
  EXPECT_EQ(f.size(), EgoState::feature_size(3));
  for (double v : f) EXPECT_EQ(v, 0.0);
}

TEST(EgoState, FeatureLayout) {
  EgoState s;
  s.speed = 10.0;
  s.acceleration = -2.0;
  s.yaw_rate = 0.25;
  s.history = {Vec2(-5.0, 1.0)};
  s.padded = {false};
  const auto f = s.features();
  ASSERT_EQ(f.size(), 6u);
  EXPECT_DOUBLE_EQ(f[0], 1.0);
  EXPECT_DOUBLE_EQ(f[1], -0.2);
  EXPECT_DOUBLE_EQ(f[2], 0.25);
  EXPECT_DOUBLE_EQ(f[3], -0.5);
  EXPECT_DOUBLE_EQ(f[4], 0.1);
  EXPECT_DOUBLE_EQ(f[5], 1.0);
}

TEST(SemanticGrid, FreeDefaultAndValidation) {
  const GridGeometry g({2, 2, 2}, 1.0, Vec3::Zero());
  SemanticGrid grid(g, 18);
  EXPECT_EQ(grid.free_category(), 17);
  EXPECT_EQ(grid.occupied_count(), 0u);
  grid.set(VoxelIndex{1, 1, 1}, 0);
  EXPECT_TRUE(grid.occupied(g.linear_index({1, 1, 1})));
  EXPECT_EQ(grid.occupied_count(), 1u);
  EXPECT_THROW(SemanticGrid(g, 1), UsageError);
  EXPECT_THROW(SemanticGrid(g, 4, std::vector<std::uint8_t>(8, 4)), DataError);
  EXPECT_THROW(SemanticGrid(g, 4, std::vector<std::uint8_t>(7, 0)), DataError);
}

TEST(Occg, CategoryRoundTripIsBitExact) {
  Rng rng(11);
  const GridGeometry g({5, 4, 3}, 0.4, Vec3(-40.0, -40.0, -1.0));
  std::vector<std::uint8_t> cats(g.voxel_count());
  for (auto& c : cats) c = static_cast<std::uint8_t>(rng.uniform_int(0, 17));
  const SemanticGrid grid(g, 18, cats);
  const std::string bytes = occg_bytes(to_occg(grid));
  std::istringstream is(bytes);
  const auto back = semantic_from_occg(read_occg(is, "mem"), 18);
  EXPECT_EQ(back.categories(), grid.categories());
  EXPECT_EQ(occg_bytes(to_occg(back)), bytes);
  // 4 magic + 2 version + 2 kind + 12 dims + 4 res + 12 origin
  EXPECT_EQ(bytes.size(), 36u + g.voxel_count());
  EXPECT_EQ(bytes.substr(0, 4), "OCCG");
}

TEST(Occg, DensityAndFeatureRoundTrip) {
  Rng rng(12);
  const GridGeometry g({3, 2, 2}, 0.5, Vec3(1, 2, 3));
  for (auto kind : {PayloadKind::density, PayloadKind::feature}) {
    OccgGrid o;
    o.geometry = g;
    o.kind = kind;
    o.feature_dim = kind == PayloadKind::feature ? 5 : 1;
    o.values.resize(g.voxel_count() * o.feature_dim);
    for (auto& v : o.values) v = static_cast<float>(rng.normal());
    const std::string bytes = occg_bytes(o);
    std::istringstream is(bytes);
    const auto back = read_occg(is, "mem");
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(back.feature_dim, o.feature_dim);
    EXPECT_EQ(back.values, o.values);
    EXPECT_EQ(occg_bytes(back), bytes);
  }
}

TEST(Occg, RejectsCorruptInput) {
  const SemanticGrid grid(GridGeometry({2, 2, 2}, 1.0, Vec3::Zero()), 4);
  std::string bytes = occg_bytes(to_occg(grid));
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad);
    EXPECT_THROW(read_occg(is, "bad.occg"), DataError);
  }
  {
    std::string bad = bytes;
    bad[4] = 2;  // version
    std::istringstream is(bad);
    try {
      read_occg(is, "v.occg");
      FAIL();
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
  }
  {
    std::istringstream is(bytes.substr(0, bytes.size() - 1));
    EXPECT_THROW(read_occg(is, "short.occg"), DataError);
  }
  {
    std::istringstream is(bytes + "x");
    EXPECT_THROW(read_occg(is, "long.occg"), DataError);
  }
}

TEST(Trilinear, CenterAndMidpoint) {
  const GridGeometry g({3, 3, 3}, 1.0, Vec3::Zero());
  const auto at_center = trilinear_taps(g, g.voxel_center(VoxelIndex{1, 1, 1}));
  ASSERT_EQ(at_center.count, 1);
  EXPECT_EQ(at_center.taps[0].voxel, g.linear_index({1, 1, 1}));
  EXPECT_DOUBLE_EQ(at_center.taps[0].weight, 1.0);
  const auto mid = trilinear_taps(g, Vec3(2.0, 1.5, 1.5));
  ASSERT_EQ(mid.count, 2);
  EXPECT_DOUBLE_EQ(mid.taps[0].weight, 0.5);
  EXPECT_DOUBLE_EQ(mid.taps[1].weight, 0.5);
  EXPECT_EQ(trilinear_taps(g, Vec3(-0.1, 1, 1)).count, 0);
}

TEST(Rng, DeterministicStreams) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const int k = c.uniform_int(-2, 3);
    EXPECT_GE(k, -2);
    EXPECT_LE(k, 3);
  }
}
