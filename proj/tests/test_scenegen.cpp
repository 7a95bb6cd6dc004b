// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "occworld/render/renderer.hpp"
#include "occworld/scene/generate.hpp"
#include "occworld/scene/io.hpp"

using namespace occworld;
using namespace occworld::scene;
namespace fs = std::filesystem;

namespace {

SceneSpec ground_only(int frames = 4) {
  SceneSpec s;
  s.frame_count = frames;
  s.objects = ObjectCounts{1, 0, 0, 0, 0, 0, 0, 0, 0};
  return s;
}

SceneSpec static_spec(std::uint64_t seed, double speed = 1.0) {
  SceneSpec s;
  s.seed = seed;
  s.frame_count = 3;
  s.objects.moving_cars = 0;
  s.objects.pedestrians = 0;
  s.ego.speed = speed;
  return s;
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("occworld_scenegen_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::pair<std::string, std::string>> dir_bytes(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto bytes = io::read_file_bytes(e.path());
    out.emplace_back(fs::relative(e.path(), dir).string(), std::string(bytes.begin(), bytes.end()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void expect_same_pose(const Pose& a, const Pose& b) {
  EXPECT_EQ(a.rotation, b.rotation);
  EXPECT_EQ(a.translation, b.translation);
}

void expect_same_scene(const Scene& a, const Scene& b) {
  EXPECT_EQ(a.spec, b.spec);
  EXPECT_EQ(a.taxonomy, b.taxonomy);
  ASSERT_EQ(a.rig.size(), b.rig.size());
  for (std::size_t c = 0; c < a.rig.size(); ++c) {
    expect_same_pose(a.rig[c].extrinsic(), b.rig[c].extrinsic());
    EXPECT_EQ(a.rig[c].intrinsics().fx, b.rig[c].intrinsics().fx);
    EXPECT_EQ(a.rig[c].width(), b.rig[c].width());
  }
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    EXPECT_EQ(a.frames[f].timestamp, b.frames[f].timestamp);
    expect_same_pose(a.frames[f].pose, b.frames[f].pose);
    EXPECT_EQ(a.frames[f].ego, b.frames[f].ego);
    EXPECT_EQ(a.frames[f].grid, b.frames[f].grid);
    EXPECT_EQ(a.frames[f].trajectory, b.frames[f].trajectory);
  }
  EXPECT_EQ(a.labels, b.labels);
}

}  // namespace

TEST(Generate, GroundOnlyWorldHasOneOccupiedLayer) {
  const auto s = generate(ground_only());
  const auto& g = s.geometry();
  for (int f = 0; f < s.frame_count(); ++f) {
    const auto& grid = s.grid(f);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const bool bottom = g.unravel(i).k == 0;
      EXPECT_EQ(grid.occupied(i), bottom);
      if (bottom) EXPECT_EQ(grid.at(i), kGround);
    }
  }
}

TEST(Generate, MovingBoxShiftsTwoVoxelsPerFrame) {
  SceneSpec spec = ground_only(5);
  spec.ego.speed = 0.0;
  SceneObject box;
  box.category = kCar;
  box.center = Vec3(-3.0, 0.1, 0.25);
  box.half_extent = Vec3(1.0, 0.6, 0.7);
  box.velocity = Vec2(2.0, 0.0);
  const auto s = simulate(spec, std::span(&box, 1));
  auto footprint = [&](int f) {
    std::vector<VoxelIndex> v;
    const auto& grid = s.grid(f);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid.at(i) == kCar) v.push_back(grid.geometry().unravel(i));
    }
    return v;
  };
  const auto base = footprint(0);
  ASSERT_FALSE(base.empty());
  for (int f = 1; f < 5; ++f) {
    auto shifted = base;
    for (auto& v : shifted) v.i += 2 * f;
    EXPECT_EQ(footprint(f), shifted) << "frame " << f;
  }
}

TEST(Generate, DeterministicBytesAndSeedSensitivity) {
  SceneSpec spec;
  spec.seed = 17;
  spec.frame_count = 3;
  const auto a = bake_labels(generate(spec)), b = bake_labels(generate(spec));
  const auto da = temp_dir("det_a"), db = temp_dir("det_b");
  save_scene(a, da);
  save_scene(b, db);
  EXPECT_EQ(dir_bytes(da), dir_bytes(db));
  spec.seed = 18;
  EXPECT_NE(generate(spec).grid(0), a.grid(0));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST(Generate, EgoKinematicsAndTrajectory) {
  SceneSpec spec = ground_only(6);
  spec.ego = {MotionProfile::straight, 3.0, 0.0, 4.0};
  auto s = generate(spec);
  for (int f = 0; f < s.frame_count(); ++f) {
    const auto& fr = s.frames[static_cast<std::size_t>(f)];
    EXPECT_NEAR(fr.ego.speed, 3.0, 1e-12);
    EXPECT_NEAR(fr.ego.acceleration, 0.0, 1e-9);
    EXPECT_NEAR(fr.timestamp, 0.5 * f, 1e-15);
    ASSERT_EQ(fr.trajectory.size(), 6u);
    for (int j = 0; j < 6; ++j) {
      EXPECT_NEAR(fr.trajectory[static_cast<std::size_t>(j)].x(), 1.5 * (j + 1), 1e-9);
      EXPECT_NEAR(fr.trajectory[static_cast<std::size_t>(j)].y(), 0.0, 1e-9);
    }
    for (int j = 0; j < 2; ++j) {
      const bool pad = f - (j + 1) < 0;
      EXPECT_EQ(fr.ego.padded[static_cast<std::size_t>(j)], pad);
      EXPECT_NEAR(fr.ego.history[static_cast<std::size_t>(j)].x(), pad ? 0.0 : -1.5 * (j + 1), 1e-9);
    }
  }
  spec.ego = {MotionProfile::arc, 4.0, 0.2, 4.0};
  s = generate(spec);
  for (const auto& fr : s.frames) {
    EXPECT_NEAR(fr.ego.yaw_rate, 0.2, 1e-9);
    // Chord length of an arc of angle w dt at radius v / w.
    EXPECT_NEAR(fr.ego.speed, 2 * 20.0 * std::sin(0.05) / 0.5, 1e-9);
    EXPECT_GT(fr.trajectory.back().y(), 0.0);  // turning left
  }
  spec.ego = {MotionProfile::stop_and_go, 2.0, 0.0, 2.0};
  s = generate(spec);
  // Period 2 s at dt 0.5: the ego is at rest at t = 0, 2 and moving between.
  EXPECT_LT(s.frames[4].ego.speed, s.frames[2].ego.speed);
  for (std::size_t f = 1; f < s.frames.size(); ++f) {
    EXPECT_GE(s.frames[f].pose.translation.x(), s.frames[f - 1].pose.translation.x());
  }
}

TEST(Generate, StaticFootprintsAgreeAcrossFramesWithinOneVoxel) {
  SceneSpec spec = static_spec(5, 2.3);
  spec.ego.profile = MotionProfile::arc;
  spec.ego.yaw_rate = 0.3;
  spec.frame_count = 4;
  const auto s = generate(spec);
  const auto& g = s.geometry();
  for (int f = 1; f < s.frame_count(); ++f) {
    const Pose to_f = relative_pose(s.frames[0].pose, s.frames[static_cast<std::size_t>(f)].pose);
    const auto& a = s.grid(0);
    const auto& b = s.grid(f);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a.occupied(i)) continue;
      const auto v = g.world_to_voxel(transform_point(to_f, g.voxel_center(i)));
      if (!v) continue;
      // Skip the rim where the neighborhood leaves the grid.
      bool found = false, inside = true;
      for (int dk = -1; dk <= 1; ++dk) {
        for (int dj = -1; dj <= 1; ++dj) {
          for (int di = -1; di <= 1; ++di) {
            const VoxelIndex n{v->i + di, v->j + dj, v->k + dk};
            if (!g.contains(n)) {
              inside = inside && dk != 0;
              continue;
            }
            found = found || b.at(n) == a.at(i);
          }
        }
      }
      if (!inside) continue;
      ++checked;
      EXPECT_TRUE(found) << "frame " << f << " voxel " << i;
    }
    EXPECT_GT(checked, 500u);
  }
}

TEST(Generate, ObjectsThatDoNotFitNameTheirArchetype) {
  SceneSpec spec;
  spec.geometry = GridGeometry({6, 6, 8}, 0.5, Vec3(-1.5, -1.5, -1.0));
  spec.objects = ObjectCounts{1, 0, 1, 0, 0, 0, 0, 0, 0};
  try {
    generate(spec);
    FAIL() << "expected a usage error";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("parked_car"), std::string::npos) << e.what();
  }
  spec.geometry = GridGeometry({32, 32, 8}, 0.5, Vec3(-8.0, -8.0, 0.0));
  spec.objects = ObjectCounts{1, 0, 0, 0, 0, 0, 0, 0, 0};
  try {
    generate(spec);
    FAIL() << "expected a usage error";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("ground"), std::string::npos) << e.what();
  }
}

TEST(Bake, GroundOnlyImageRows) {
  const auto s = bake_labels(generate(ground_only(1)));
  ASSERT_TRUE(s.baked());
  for (int c = 0; c < s.camera_count(); ++c) {
    const auto& l = s.camera_labels(0, c);
    for (std::uint32_t px = 0; px < l.width; ++px) {
      EXPECT_EQ(l.semantic[l.index(px, l.height - 1)], kGround);
      EXPECT_EQ(l.semantic[l.index(px, 0)], kInvalidSemantic);
      EXPECT_EQ(l.depth[l.index(px, 0)], 0.0f);
    }
  }
}

TEST(Bake, InvalidSemanticIffNoDepthAndShadedAlbedo) {
  SceneSpec spec;
  spec.seed = 9;
  spec.frame_count = 2;
  const auto s = bake_labels(generate(spec));
  for (const auto& row : s.labels) {
    for (const auto& l : row) {
      for (std::size_t i = 0; i < l.pixel_count(); ++i) {
        EXPECT_EQ(l.semantic[i] == kInvalidSemantic, l.depth[i] == 0.0f);
        if (l.semantic[i] == kInvalidSemantic) continue;
        const auto& a = s.taxonomy.albedo[l.semantic[i]];
        for (int c = 0; c < 3; ++c) {
          const double want = 255.0 * a[c] * std::exp(-l.depth[i] / 50.0);
          EXPECT_LE(std::abs(l.rgb[3 * i + c] - want), 0.5 + 1e-3);
        }
      }
    }
  }
}

TEST(Bake, BoxFaceDepthMatchesAnalyticIntersection) {
  SceneSpec spec = ground_only(1);
  spec.ego.speed = 0.0;
  SceneObject box;
  box.category = kBarrier;
  box.center = Vec3(4.3, 0.2, 0.45);
  box.half_extent = Vec3(0.8, 1.7, 0.95);
  const auto s = bake_labels(simulate(spec, std::span(&box, 1)));
  const auto& cam = s.rig[0];
  const auto& l = s.camera_labels(0, 0);
  const double tol = std::sqrt(3.0) * s.geometry().resolution();
  int checked = 0;
  for (std::uint32_t py = 0; py < l.height; ++py) {
    for (std::uint32_t px = 0; px < l.width; ++px) {
      const auto i = l.index(px, py);
      if (l.semantic[i] != kBarrier) continue;
      const auto t = metrics::clip_to_box(box.center - box.half_extent,
                                          box.center + box.half_extent, cam.center(),
                                          cam.ray_direction({px + 0.5, py + 0.5}));
      if (!t) continue;
      ++checked;
      EXPECT_NEAR(l.depth[i], t->first, tol) << px << "," << py;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Bake, TransportedRaysSeeTheSameSurfacesOnAStaticScene) {
  // One voxel of ego travel per frame: consecutive ego-frame grids are exact
  // shifts, so rays moved between frames must find the same first hit except
  // where the scene enters or leaves the grid.
  const auto s = bake_labels(generate(static_spec(3, 1.0)));
  const auto bundle = render::build_supervision_bundle(s, 1, 1, 1);
  const auto& grid = s.grid(1);
  const double res = s.geometry().resolution();
  int total = 0, exact = 0;
  std::vector<render::Ray> rays;
  std::vector<float> baked;
  for (std::size_t r = 0; r < bundle.size(); ++r) {
    if (bundle.rays[r].source.frame != 0 || !bundle.labels[r].valid()) continue;
    ++total;
    const auto hit = metrics::ray_cast_first_hit(grid, bundle.rays[r]);
    exact += hit && std::abs(hit->depth - bundle.labels[r].depth) < 1e-4 &&
             hit->category == bundle.labels[r].semantic;
    rays.push_back(bundle.rays[r]);
    baked.push_back(bundle.labels[r].depth);
  }
  ASSERT_GT(total, 1000);
  EXPECT_GT(static_cast<double>(exact) / total, 0.9);
  // Rendered against the converted fields of the target frame, most
  // transported rays land within one voxel of their baked depth.
  const auto fields = render::fields_from_grid<double>(grid, s.taxonomy.albedo, 3.0 / res);
  render::RayBundle moved;
  moved.rays = rays;
  const auto px = render::render_bundle(fields, moved, 256);
  int close = 0;
  for (std::size_t r = 0; r < px.size(); ++r) close += std::abs(px[r].depth - baked[r]) < res;
  EXPECT_GT(static_cast<double>(close) / total, 0.85);
}

TEST(SceneIo, RoundTripAndSelectiveLoading) {
  SceneSpec spec;
  spec.seed = 21;
  spec.frame_count = 3;
  spec.ego = {MotionProfile::arc, 3.3, -0.17, 4.0};
  const auto s = bake_labels(generate(spec));
  const auto dir = temp_dir("roundtrip");
  save_scene(s, dir);
  expect_same_scene(load_scene(dir), s);

  // Pre-training view: no grids even when the grid files are gone.
  fs::remove_all(dir / "grids");
  const auto labels_only = load_scene(dir, {.grids = false});
  EXPECT_FALSE(labels_only.frames[0].grid.has_value());
  EXPECT_EQ(labels_only.labels, s.labels);
  EXPECT_THROW(labels_only.grid(0), DataError);
  EXPECT_THROW(load_scene(dir), DataError);

  // Fine-tuning view: images and grids only, with depth and semantic maps gone.
  save_scene(s, dir);
  for (int f = 0; f < s.frame_count(); ++f) {
    for (int c = 0; c < s.camera_count(); ++c) {
      fs::remove(label_path(dir, f, c, "depth.f32"));
      fs::remove(label_path(dir, f, c, "sem.u8"));
    }
  }
  const auto images_only = load_scene(dir, {.supervision = false});
  EXPECT_EQ(images_only.grid(2), s.grid(2));
  EXPECT_EQ(images_only.camera_labels(1, 1).rgb, s.camera_labels(1, 1).rgb);
  EXPECT_TRUE(images_only.camera_labels(1, 1).depth.empty());

  // Neither: nothing under labels/ is opened.
  fs::remove_all(dir / "labels");
  const auto grids_only = load_scene(dir, {.images = false, .supervision = false});
  EXPECT_FALSE(grids_only.baked());
  EXPECT_EQ(grids_only.grid(2), s.grid(2));
  try {
    load_scene(dir);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("frame_0000_cam0"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(SceneIo, CorruptMagicAndVersionErrors) {
  SceneSpec spec = ground_only(1);
  const auto s = bake_labels(generate(spec));
  const auto dir = temp_dir("corrupt");
  save_scene(s, dir);
  const auto depth = label_path(dir, 0, 1, "depth.f32");
  {
    std::fstream f(depth, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  try {
    load_scene(dir);
    FAIL();
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(depth.string()), std::string::npos) << what;
    EXPECT_NE(what.find("magic"), std::string::npos) << what;
  }
  save_scene(s, dir);
  {
    std::fstream f(depth, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.put(7);
  }
  try {
    load_scene(dir);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version 7"), std::string::npos) << e.what();
  }
  save_scene(s, dir);
  {
    auto j = scene_to_json(s);
    j["format_version"] = 99;
    std::ofstream(dir / "scene.json") << j.dump();
  }
  try {
    load_scene(dir);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos) << e.what();
  }
  save_scene(s, dir);
  const auto grid = grid_path(dir, 0);
  {
    std::fstream f(grid, std::ios::in | std::ios::out | std::ios::binary);
    f.write("GCCO", 4);
  }
  try {
    load_scene(dir);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(grid.string()), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(SceneIo, SpecJsonRoundTripAndOverrides) {
  SceneSpec spec;
  spec.seed = 99;
  spec.geometry = GridGeometry({16, 12, 6}, 0.4, Vec3(-3.2, -2.4, -1.0));
  spec.ego = {MotionProfile::stop_and_go, 2.5, 0.0, 3.0};
  spec.objects.poles = 7;
  spec.rig.count = 4;
  EXPECT_EQ(spec_from_json(Json::parse(spec_to_json(spec).dump())), spec);
  const auto partial = spec_from_json(Json::parse(R"({"seed": 5, "ego": {"speed": 1.5}})"));
  EXPECT_EQ(partial.seed, 5u);
  EXPECT_EQ(partial.ego.speed, 1.5);
  EXPECT_EQ(partial.frame_count, SceneSpec{}.frame_count);
  EXPECT_THROW(spec_from_json(Json::parse(R"({"ego": {"profile": "loop"}})")), DataError);
}
