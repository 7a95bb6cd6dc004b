// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "occworld/render/raygen.hpp"

using namespace occworld;
using namespace occworld::render;

namespace {

Pose random_pose(Rng& rng) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(rng.uniform(-3, 3),
                                 Vec3(rng.normal(), rng.normal(), rng.normal()).normalized())
                   .toRotationMatrix();
  p.translation = Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1, 1));
  return p;
}

scene::Scene labeled_scene(int frames, int cameras) {
  scene::Scene s;
  s.spec.geometry = GridGeometry({8, 8, 4}, 0.5, Vec3(-2, -2, -1));
  s.taxonomy = scene::Taxonomy::standard();
  for (int c = 0; c < cameras; ++c) {
    s.rig.push_back(CameraModel::looking(c * 3.14159, 0.1, Vec3(0, 0, 0.5), 1.4, 6, 4));
  }
  for (int f = 0; f < frames; ++f) {
    scene::Frame fr;
    fr.timestamp = 0.5 * f;
    fr.pose = Pose::from_translation(Vec3(1.0 * f, 0, 0));
    s.frames.push_back(fr);
    std::vector<scene::CameraLabels> per_cam;
    for (int c = 0; c < cameras; ++c) {
      scene::CameraLabels l;
      l.width = 6;
      l.height = 4;
      l.depth.resize(24);
      l.semantic.resize(24);
      l.rgb.resize(72);
      for (std::size_t i = 0; i < 24; ++i) {
        l.depth[i] = static_cast<float>(1 + f + 10 * c + 0.01 * i);
        l.semantic[i] = static_cast<std::uint8_t>((i + c) % 8);
      }
      per_cam.push_back(l);
    }
    s.labels.push_back(per_cam);
  }
  return s;
}

}  // namespace

TEST(PixelRays, TwoByTwoSharesOrigin) {
  const CameraModel cam({1.0, 1.0, 1.0, 1.0}, 2, 2, Pose::from_translation(Vec3(1, 2, 3)));
  const auto rays = pixel_rays(cam, 1);
  ASSERT_EQ(rays.size(), 4u);
  for (const auto& r : rays) {
    EXPECT_LT((r.origin - Vec3(1, 2, 3)).norm(), 1e-12);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
  }
}

TEST(PixelRays, PrincipalPointIsOpticalAxis) {
  const auto cam = CameraModel::looking(0.7, 0.2, Vec3(0, 0, 1.5), 1.0, 10, 8);
  const Vec3 d = cam.ray_direction({5.0, 4.0});
  EXPECT_LT((d - cam.forward()).norm(), 1e-12);
}

TEST(PixelRays, CountAndReprojection) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cam = CameraModel::looking(rng.uniform(-3, 3), rng.uniform(-0.5, 0.5),
                                          Vec3(rng.uniform(-1, 1), 0, 1.5),
                                          rng.uniform(0.6, 2.0), 37, 23);
    const std::uint32_t stride = 1 + trial % 5;
    const auto rays = pixel_rays(cam, stride);
    EXPECT_EQ(rays.size(), ((37 + stride - 1) / stride) * ((23 + stride - 1) / stride));
    for (const auto& r : rays) {
      EXPECT_NEAR(r.direction.norm(), 1.0, 1e-6);
      const auto proj = cam.project(r.at(7.0));
      ASSERT_TRUE(proj);
      EXPECT_NEAR(proj->pixel.u, r.source.px + 0.5, 1e-4);
      EXPECT_NEAR(proj->pixel.v, r.source.py + 0.5, 1e-4);
    }
  }
  EXPECT_THROW(pixel_rays(CameraModel::looking(0, 0, Vec3::Zero(), 1, 4, 4), 0), UsageError);
}

TEST(TransportRays, IdentityAndTranslation) {
  const auto cam = CameraModel::looking(0.0, 0.0, Vec3(0, 0, 1), 1.0, 4, 4);
  const auto rays = pixel_rays(cam, 1);
  Rng rng(3);
  const Pose p = random_pose(rng);
  const auto same = transport_rays(rays, p, p);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    EXPECT_LT((same[i].origin - rays[i].origin).norm(), 1e-6);
    EXPECT_LT((same[i].direction - rays[i].direction).norm(), 1e-6);
  }
  // The source frame is 2 m behind the target frame.
  const auto moved =
      transport_rays(rays, Pose::identity(), Pose::from_translation(Vec3(2, 0, 0)));
  for (std::size_t i = 0; i < rays.size(); ++i) {
    EXPECT_LT((moved[i].origin - (rays[i].origin - Vec3(2, 0, 0))).norm(), 1e-12);
    EXPECT_LT((moved[i].direction - rays[i].direction).norm(), 1e-12);
  }
}

TEST(TransportRays, WorldPointInvariance) {
  Rng rng(4);
  const auto cam = CameraModel::looking(0.3, 0.1, Vec3(0.4, 0, 1.4), 1.2, 9, 7);
  const auto rays = pixel_rays(cam, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose from = random_pose(rng), to = random_pose(rng);
    const auto moved = transport_rays(rays, from, to);
    for (std::size_t i = 0; i < rays.size(); ++i) {
      EXPECT_NEAR(moved[i].direction.norm(), 1.0, 1e-6);
      for (double t : {0.1, 1.0, 3.3, 10.0, 40.0}) {
        const Vec3 w0 = transform_point(from, rays[i].at(t));
        const Vec3 w1 = transform_point(to, moved[i].at(t));
        EXPECT_LT((w0 - w1).norm(), 1e-5);
      }
    }
  }
}

TEST(SampleAlong, SingleMidpoint) {
  Ray r;
  r.t_near = 0.0;
  r.t_far = 2.0;
  const auto s = sample_along(r, 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.depths[0], 1.0);
  EXPECT_DOUBLE_EQ(s.deltas[0], 1.0);
}

TEST(SampleAlong, UniformStrata) {
  Ray r;
  r.t_near = 0.0;
  r.t_far = 4.0;
  const auto s = sample_along(r, 4);
  EXPECT_EQ(s.depths, (std::vector<double>{0.5, 1.5, 2.5, 3.5}));
  EXPECT_EQ(s.deltas, (std::vector<double>{1, 1, 1, 1}));
  EXPECT_THROW(sample_along(r, 0), UsageError);
}

TEST(SampleAlong, JitterStaysInStrataAndIsReproducible) {
  Ray r;
  r.t_near = 0.1;
  r.t_far = 9.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = sample_along(r, 7, true, seed);
    const auto b = sample_along(r, 7, true, seed);
    EXPECT_EQ(a.depths, b.depths);
    const double bin = (r.t_far - r.t_near) / 7;
    for (int m = 0; m < 7; ++m) {
      EXPECT_GE(a.depths[m], r.t_near + m * bin);
      EXPECT_LT(a.depths[m], r.t_near + (m + 1) * bin);
      if (m > 0) EXPECT_GT(a.depths[m], a.depths[m - 1]);
    }
    for (int m = 0; m + 1 < 7; ++m) {
      EXPECT_DOUBLE_EQ(a.deltas[m], a.depths[m + 1] - a.depths[m]);
    }
    EXPECT_DOUBLE_EQ(a.deltas[6], a.deltas[5]);
  }
}

TEST(SupervisionBundle, NoAdjacencyEqualsCameraRays) {
  const auto s = labeled_scene(3, 1);
  const auto bundle = build_supervision_bundle(s, 1, 0, 100, {0.1, 20.0});
  const auto own = pixel_rays(s.rig[0], 100, {0.1, 20.0});
  ASSERT_EQ(bundle.size(), own.size());
  for (std::size_t i = 0; i < own.size(); ++i) {
    EXPECT_LT((bundle.rays[i].origin - own[i].origin).norm(), 1e-12);
    EXPECT_LT((bundle.rays[i].direction - own[i].direction).norm(), 1e-12);
  }
  EXPECT_EQ(bundle.labels.size(), bundle.size());
}

TEST(SupervisionBundle, AdjacentFramesTripleTheBundle) {
  const auto s = labeled_scene(3, 2);
  const auto b0 = build_supervision_bundle(s, 1, 0, 2);
  const auto b1 = build_supervision_bundle(s, 1, 1, 2);
  EXPECT_EQ(b1.size(), 3 * b0.size());
  // Clamped at the sequence start: frames 0 and 1 only.
  EXPECT_EQ(build_supervision_bundle(s, 0, 1, 2).size(), 2 * b0.size());
  // Labels come from the ray's own source frame and pixel.
  for (std::size_t i = 0; i < b1.size(); ++i) {
    const auto& src = b1.rays[i].source;
    const auto& l = s.labels[src.frame][src.camera];
    EXPECT_EQ(b1.labels[i].depth, l.depth[l.index(src.px, src.py)]);
  }
  // Default far bound is the grid diagonal.
  EXPECT_DOUBLE_EQ(b0.rays[0].t_far, s.geometry().diagonal());
}

TEST(SupervisionBundle, MissingLabelsNameFrameAndCamera) {
  auto s = labeled_scene(3, 2);
  s.labels[2][1].depth.clear();
  try {
    build_supervision_bundle(s, 1, 1, 2);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 2 camera 1"), std::string::npos) << e.what();
  }
  s.labels.clear();
  EXPECT_THROW(build_supervision_bundle(s, 1, 0, 2), DataError);
}
