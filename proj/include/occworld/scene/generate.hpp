// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural driving scenes: world-frame objects with constant velocities, an
// analytic ego path, per-frame ego-frame voxelization and label baking.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "occworld/core/rng.hpp"
#include "occworld/metrics/raycast.hpp"
#include "occworld/scene/scene.hpp"

namespace occworld::scene {

/// Top of the ground plane in world and ego coordinates; voxels whose center
/// lies below it are ground.
inline constexpr double kGroundTop = -0.5;

/// Attenuation length of the baked RGB shading.
inline constexpr double kShadeLength = 50.0;

enum class Shape { box, ellipsoid };

/// Solid in world coordinates at t = 0, translating with `velocity`.
struct SceneObject {
  std::string archetype;
  int category = kOthers;
  Shape shape = Shape::box;
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Ones();
  double yaw = 0.0;
  Vec2 velocity = Vec2::Zero();

  bool moving() const { return velocity.squaredNorm() > 0.0; }

  Vec3 center_at(double t) const {
    return center + Vec3(velocity.x() * t, velocity.y() * t, 0.0);
  }

  bool contains(const Vec3& p, double t) const {
    const Vec3 d = p - center_at(t);
    const double c = std::cos(yaw), s = std::sin(yaw);
    const Vec3 local(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
    if (shape == Shape::box) {
      return std::abs(local.x()) <= half_extent.x() && std::abs(local.y()) <= half_extent.y() &&
             std::abs(local.z()) <= half_extent.z();
    }
    return local.cwiseQuotient(half_extent).squaredNorm() <= 1.0;
  }

  /// Radius of the vertical cylinder around the center that holds the object.
  double footprint_radius() const { return half_extent.head<2>().norm(); }
};

// ---------------------------------------------------------------------------
// Ego motion

/// Ego pose (ego -> world) at time t. Every profile starts at the world origin
/// facing +x; times before zero extrapolate the same law.
inline Pose ego_pose_at(const EgoMotionSpec& m, double t) {
  switch (m.profile) {
    case MotionProfile::straight:
      return Pose::from_translation(Vec3(m.speed * t, 0.0, 0.0));
    case MotionProfile::arc: {
      const double w = m.yaw_rate;
      if (std::abs(w) < 1e-12) return Pose::from_translation(Vec3(m.speed * t, 0.0, 0.0));
      const double r = m.speed / w;
      return Pose::from_yaw(w * t, Vec3(r * std::sin(w * t), r * (1.0 - std::cos(w * t)), 0.0));
    }
    case MotionProfile::stop_and_go: {
      // speed(t) = v (1 - cos(2 pi t / T)): mean v, at rest every period.
      const double a = 2.0 * std::numbers::pi / m.period;
      return Pose::from_translation(Vec3(m.speed * (t - std::sin(a * t) / a), 0.0, 0.0));
    }
  }
  return Pose::identity();
}

inline double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

/// Kinematics from finite differences of the pose sequence: speed over the
/// interval ending at t, acceleration from two such speeds, yaw rate from the
/// heading change. History holds the k previous frame positions in the
/// current ego frame, padded before frame 0.
inline EgoState ego_state_at(const EgoMotionSpec& m, int frame, double dt, int k) {
  const double t = frame * dt;
  const Pose p0 = ego_pose_at(m, t), p1 = ego_pose_at(m, t - dt), p2 = ego_pose_at(m, t - 2 * dt);
  EgoState s;
  s.speed = (p0.translation - p1.translation).norm() / dt;
  const double prev_speed = (p1.translation - p2.translation).norm() / dt;
  s.acceleration = (s.speed - prev_speed) / dt;
  s.yaw_rate = wrap_angle(p0.yaw() - p1.yaw()) / dt;
  const Pose world_to_ego = inverse(p0);
  for (int j = 1; j <= k; ++j) {
    if (frame - j < 0) {
      s.history.push_back(Vec2::Zero());
      s.padded.push_back(true);
    } else {
      const Vec3 q = transform_point(world_to_ego, ego_pose_at(m, t - j * dt).translation);
      s.history.emplace_back(q.x(), q.y());
      s.padded.push_back(false);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Rig

inline std::vector<CameraModel> make_rig(const RigSpec& r) {
  if (r.count < 1) throw UsageError("camera rig needs at least one camera");
  if (!(r.hfov > 0.0 && r.hfov < std::numbers::pi)) {
    throw UsageError(detail::concat("camera field of view must lie in (0, pi), got ", r.hfov));
  }
  std::vector<CameraModel> rig;
  for (int c = 0; c < r.count; ++c) {
    const double yaw = 2.0 * std::numbers::pi * c / r.count;
    const Vec3 pos(r.forward_offset * std::cos(yaw), r.forward_offset * std::sin(yaw),
                   r.mount_height);
    rig.push_back(CameraModel::looking(yaw, r.pitch, pos, r.hfov, r.width, r.height));
  }
  return rig;
}

// ---------------------------------------------------------------------------
// Object placement

namespace detail_gen {

struct Archetype {
  const char* name;
  int category;
  Shape shape;
  Vec3 half_min, half_max;    // x along the road, y across, z up
  double lateral_min, lateral_max;  // distance from the path, either side
  double speed_min, speed_max;      // along the road, either direction
};

inline double sample(Rng& rng, double lo, double hi) { return lo == hi ? lo : rng.uniform(lo, hi); }

/// Throws when the smallest instance of an archetype cannot be represented:
/// its footprint or its lateral band exceeds the grid, or there is less than
/// one voxel of room above the ground. Tall objects are clipped at the top.
inline void check_fits(const Archetype& a, const GridGeometry& g) {
  const Vec3 lo = g.origin(), hi = g.max_corner();
  const double room = hi.z() - std::max(lo.z(), kGroundTop);
  const double footprint = 2.0 * std::max(a.half_min.x(), a.half_min.y());
  const double reach = std::max({-lo.x(), hi.x(), -lo.y(), hi.y()});
  if (room < g.resolution() || footprint > std::min(hi.x() - lo.x(), hi.y() - lo.y()) ||
      a.lateral_min - a.half_min.y() > reach) {
    throw UsageError(detail::concat("scene objects of archetype '", a.name,
                                    "' do not fit the grid"));
  }
}

}  // namespace detail_gen

/// Places the objects requested by the spec along the ego path. Uses a
/// stream derived from the spec seed; positions avoid overlapping earlier
/// objects when possible.
inline std::vector<SceneObject> place_objects(const SceneSpec& spec) {
  using detail_gen::Archetype;
  const auto& n = spec.objects;
  if (n.ground < 0 || n.ground > 1) throw UsageError("ground count must be 0 or 1");
  const auto& g = spec.geometry;
  if (n.ground == 1 && !(g.origin().z() + 0.5 * g.resolution() < kGroundTop)) {
    throw UsageError("scene objects of archetype 'ground' do not fit the grid");
  }
  const double vmin = spec.moving_speed_min, vmax = spec.moving_speed_max;
  if (!(vmin >= 0.0 && vmax >= vmin)) throw UsageError("moving speed range is invalid");
  const std::pair<Archetype, int> plan[] = {
      {{"building", kBuilding, Shape::box, {2.0, 1.0, 2.0}, {4.0, 2.0, 2.0}, 6.5, 8.0, 0, 0},
       n.buildings},
      {{"parked_car", kCar, Shape::box, {2.0, 0.9, 0.75}, {2.2, 1.0, 0.8}, 4.0, 5.0, 0, 0},
       n.parked_cars},
      {{"moving_car", kCar, Shape::box, {2.0, 0.9, 0.75}, {2.2, 1.0, 0.8}, 2.5, 2.5, vmin, vmax},
       n.moving_cars},
      {{"pedestrian", kPedestrian, Shape::box, {0.35, 0.35, 0.9}, {0.4, 0.4, 0.95}, 3.5, 4.5, 0.5,
        1.5},
       n.pedestrians},
      {{"pole", kPole, Shape::box, {0.3, 0.3, 1.5}, {0.3, 0.3, 1.75}, 3.5, 4.0, 0, 0}, n.poles},
      {{"barrier", kBarrier, Shape::box, {1.0, 0.3, 0.5}, {1.5, 0.35, 0.5}, 3.5, 4.5, 0, 0},
       n.barriers},
      {{"vegetation", kVegetation, Shape::ellipsoid, {1.0, 1.0, 1.0}, {1.5, 1.5, 1.5}, 5.0, 7.0,
        0, 0},
       n.vegetation},
      {{"others", kOthers, Shape::box, {0.4, 0.4, 0.4}, {0.9, 0.9, 0.75}, 3.0, 6.0, 0, 0},
       n.others},
  };
  Rng rng = Rng(spec.seed).fork(0x0B1EC7);
  const double t_end = (spec.frame_count - 1) * spec.dt;
  std::vector<SceneObject> objects;
  for (const auto& [a, count] : plan) {
    if (count < 0) throw UsageError(detail::concat("negative count for archetype '", a.name, "'"));
    if (count > 0) detail_gen::check_fits(a, g);
    for (int i = 0; i < count; ++i) {
      SceneObject best;
      double best_clearance = -1e9;
      for (int attempt = 0; attempt < 24; ++attempt) {
        SceneObject o;
        o.archetype = a.name;
        o.category = a.category;
        o.shape = a.shape;
        for (int ax = 0; ax < 3; ++ax) {
          o.half_extent[ax] = detail_gen::sample(rng, a.half_min[ax], a.half_max[ax]);
        }
        const double tau = rng.uniform(0.0, std::max(t_end, 0.0));
        const double along = rng.uniform(-6.0, 8.0);
        const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
        const double lateral = side * detail_gen::sample(rng, a.lateral_min, a.lateral_max);
        const Pose ref = ego_pose_at(spec.ego, tau);
        const Vec3 at = transform_point(ref, Vec3(along, lateral, 0.0));
        o.yaw = ref.yaw() + rng.uniform(-0.15, 0.15);
        o.center = Vec3(at.x(), at.y(), kGroundTop + o.half_extent.z());
        if (a.speed_max > 0.0) {
          // Moving things travel along the road; cars keep to their side.
          const double speed = detail_gen::sample(rng, a.speed_min, a.speed_max);
          const double dir = a.category == kCar ? side : (rng.bernoulli(0.5) ? 1.0 : -1.0);
          o.velocity = speed * dir * Vec2(std::cos(o.yaw), std::sin(o.yaw));
          // Start where the object reaches its sampled spot at tau.
          o.center.x() -= o.velocity.x() * tau;
          o.center.y() -= o.velocity.y() * tau;
        }
        double clearance = 1e9;
        for (const auto& other : objects) {
          if (o.moving() || other.moving()) continue;
          const double d = (o.center.head<2>() - other.center.head<2>()).norm();
          clearance = std::min(clearance, d - o.footprint_radius() - other.footprint_radius());
        }
        if (clearance > best_clearance) {
          best = o;
          best_clearance = clearance;
        }
        if (clearance >= 0.0) break;
      }
      objects.push_back(best);
    }
  }
  return objects;
}

// ---------------------------------------------------------------------------
// Voxelization

/// Ground-truth grid in the ego frame at `pose` and time t: moving objects
/// take precedence over static ones, which take precedence over ground.
inline SemanticGrid voxelize(const GridGeometry& g, int num_categories,
                             std::span<const SceneObject> objects, bool ground, const Pose& pose,
                             double t) {
  SemanticGrid grid(g, num_categories);
  const Pose world_to_ego = inverse(pose);
  const auto fill = [&](const SceneObject& o) {
    const Vec3 c = transform_point(world_to_ego, o.center_at(t));
    const double r = o.footprint_radius(), hz = o.half_extent.z();
    const Vec3 lo = (c - Vec3(r, r, hz) - g.origin()) / g.resolution();
    const Vec3 hi = (c + Vec3(r, r, hz) - g.origin()) / g.resolution();
    const auto clampi = [](double v, std::uint32_t n) {
      return std::clamp(static_cast<int>(std::floor(v)), 0, static_cast<int>(n) - 1);
    };
    if (hi.x() < 0 || hi.y() < 0 || hi.z() < 0 || lo.x() >= g.dims().x ||
        lo.y() >= g.dims().y || lo.z() >= g.dims().z) {
      return;
    }
    for (int k = clampi(lo.z(), g.dims().z); k <= clampi(hi.z(), g.dims().z); ++k) {
      for (int j = clampi(lo.y(), g.dims().y); j <= clampi(hi.y(), g.dims().y); ++j) {
        for (int i = clampi(lo.x(), g.dims().x); i <= clampi(hi.x(), g.dims().x); ++i) {
          const VoxelIndex v{i, j, k};
          const auto lin = g.linear_index(v);
          if (grid.occupied(lin)) continue;
          if (o.contains(transform_point(pose, g.voxel_center(v)), t)) grid.set(lin, o.category);
        }
      }
    }
  };
  for (const auto& o : objects) {
    if (o.moving()) fill(o);
  }
  for (const auto& o : objects) {
    if (!o.moving()) fill(o);
  }
  if (ground) {
    for (std::size_t lin = 0; lin < grid.size(); ++lin) {
      if (!grid.occupied(lin) && g.voxel_center(lin).z() < kGroundTop) grid.set(lin, kGround);
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Scene assembly

inline void validate(const SceneSpec& spec) {
  if (spec.frame_count < 1) throw UsageError("scene needs at least one frame");
  if (!(spec.dt > 0.0)) throw UsageError("frame interval must be positive");
  if (spec.history_frames < 0) throw UsageError("history length must be >= 0");
  if (spec.trajectory_horizon < 0) throw UsageError("trajectory horizon must be >= 0");
  if (spec.ego.profile == MotionProfile::stop_and_go && !(spec.ego.period > 0.0)) {
    throw UsageError("stop-and-go period must be positive");
  }
}

/// Scene from an explicit object list.
inline Scene simulate(const SceneSpec& spec, std::span<const SceneObject> objects) {
  validate(spec);
  Scene s;
  s.spec = spec;
  s.taxonomy = Taxonomy::standard(spec.num_categories);
  s.rig = make_rig(spec.rig);
  for (const auto& o : objects) {
    if (o.category < 0 || o.category >= s.taxonomy.free_category()) {
      throw UsageError(detail::concat("object category ", o.category, " outside the taxonomy"));
    }
  }
  for (int i = 0; i < spec.frame_count; ++i) {
    Frame f;
    f.timestamp = i * spec.dt;
    f.pose = ego_pose_at(spec.ego, f.timestamp);
    f.ego = ego_state_at(spec.ego, i, spec.dt, spec.history_frames);
    f.grid = voxelize(spec.geometry, spec.num_categories, objects, spec.objects.ground == 1, f.pose,
                      f.timestamp);
    const Pose world_to_ego = inverse(f.pose);
    for (int j = 1; j <= spec.trajectory_horizon; ++j) {
      const Vec3 q = transform_point(world_to_ego,
                                     ego_pose_at(spec.ego, f.timestamp + j * spec.dt).translation);
      f.trajectory.emplace_back(q.x(), q.y());
    }
    s.frames.push_back(std::move(f));
  }
  return s;
}

inline Scene generate(const SceneSpec& spec) {
  validate(spec);
  const auto objects = place_objects(spec);
  return simulate(spec, objects);
}

// ---------------------------------------------------------------------------
// Baking

inline std::uint8_t shade(float albedo, double depth) {
  const double v = albedo * std::exp(-depth / kShadeLength);
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Depth, semantic and RGB images of one camera against one grid, one ray
/// per pixel center.
inline CameraLabels bake_camera(const SemanticGrid& grid, const CameraModel& cam,
                                const Taxonomy& taxonomy) {
  CameraLabels l;
  l.width = cam.width();
  l.height = cam.height();
  l.depth.assign(l.pixel_count(), 0.0f);
  l.semantic.assign(l.pixel_count(), kInvalidSemantic);
  l.rgb.assign(3 * l.pixel_count(), 0);
  for (std::uint32_t py = 0; py < l.height; ++py) {
    for (std::uint32_t px = 0; px < l.width; ++px) {
      const Vec3 d = cam.ray_direction({px + 0.5, py + 0.5});
      const auto hit = metrics::ray_cast_first_hit(grid, cam.center(), d);
      if (!hit) continue;
      const auto idx = l.index(px, py);
      l.depth[idx] = static_cast<float>(hit->depth);
      l.semantic[idx] = static_cast<std::uint8_t>(hit->category);
      const auto& albedo = taxonomy.albedo.at(static_cast<std::size_t>(hit->category));
      for (int c = 0; c < 3; ++c) l.rgb[3 * idx + c] = shade(albedo[c], hit->depth);
    }
  }
  return l;
}

/// Bakes labels for every frame and camera. A first hit at depth exactly 0
/// (camera inside an occupied voxel) is stored as the smallest positive float
/// so that depth 0 keeps meaning "no hit".
inline Scene bake_labels(Scene scene) {
  scene.labels.assign(scene.frames.size(), {});
  for (int f = 0; f < scene.frame_count(); ++f) {
    const auto& grid = scene.grid(f);
    auto& row = scene.labels[static_cast<std::size_t>(f)];
    for (const auto& cam : scene.rig) {
      auto l = bake_camera(grid, cam, scene.taxonomy);
      for (std::size_t i = 0; i < l.pixel_count(); ++i) {
        if (l.semantic[i] != kInvalidSemantic && l.depth[i] <= 0.0f) {
          l.depth[i] = std::numeric_limits<float>::min();
        }
      }
      row.push_back(std::move(l));
    }
  }
  return scene;
}

}  // namespace occworld::scene
