// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "occworld/core/camera.hpp"
#include "occworld/core/rng.hpp"
#include "occworld/scene/scene.hpp"

namespace occworld::render {

struct RaySource {
  int frame = 0;
  int camera = 0;
  std::uint32_t px = 0;
  std::uint32_t py = 0;

  friend bool operator==(const RaySource&, const RaySource&) = default;
};

/// Ray expressed in the current ego frame; `direction` is unit length.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();
  RaySource source{};
  double t_near = 0.1;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct RayBounds {
  double t_near = 0.1;
  double t_far = 0.0;  // <= 0 selects the grid diagonal

  static RayBounds for_grid(const GridGeometry& g, double t_near = 0.1) {
    return {t_near, g.diagonal()};
  }
};

/// Sample depths along one ray with the interval after each sample.
struct RaySamples {
  Ray ray;
  std::vector<double> depths;
  std::vector<double> deltas;

  std::size_t size() const { return depths.size(); }
};

/// Ground-truth 2D label attached to a ray. depth 0 marks a ray that does
/// not hit anything (no depth or semantic supervision).
struct RayLabel {
  float depth = 0.0f;
  std::uint8_t semantic = scene::kInvalidSemantic;
  std::array<float, 3> rgb{0.0f, 0.0f, 0.0f};

  bool valid() const { return depth > 0.0f; }
};

struct RayBundle {
  std::vector<Ray> rays;
  std::vector<RayLabel> labels;  // empty, or one per ray

  std::size_t size() const { return rays.size(); }
  bool labeled() const { return !labels.empty(); }
};

/// One ray per sampled pixel center (every `stride`-th pixel in each axis).
inline std::vector<Ray> pixel_rays(const CameraModel& camera, std::uint32_t stride,
                                   RayBounds bounds = {0.1, 50.0}, int frame = 0,
                                   int camera_index = 0) {
  if (stride < 1) throw UsageError("pixel_rays: stride must be >= 1");
  if (!(bounds.t_far > bounds.t_near) || bounds.t_near < 0.0) {
    throw UsageError("pixel_rays: invalid ray bounds");
  }
  std::vector<Ray> rays;
  rays.reserve(((camera.width() + stride - 1) / stride) *
               ((camera.height() + stride - 1) / stride));
  const Vec3 origin = camera.center();
  for (std::uint32_t py = 0; py < camera.height(); py += stride) {
    for (std::uint32_t px = 0; px < camera.width(); px += stride) {
      Ray r;
      r.origin = origin;
      r.direction = camera.ray_direction({px + 0.5, py + 0.5});
      r.source = {frame, camera_index, px, py};
      r.t_near = bounds.t_near;
      r.t_far = bounds.t_far;
      rays.push_back(r);
    }
  }
  return rays;
}

/// Re-expresses rays given in the ego frame of `from_pose` in the ego frame of
/// `to_pose` (both ego -> world).
inline std::vector<Ray> transport_rays(const std::vector<Ray>& rays,
                                       const Pose& from_pose, const Pose& to_pose) {
  const Pose rel = relative_pose(from_pose, to_pose);
  std::vector<Ray> out;
  out.reserve(rays.size());
  for (const auto& r : rays) {
    Ray t = r;
    t.origin = transform_point(rel, r.origin);
    t.direction = transform_vector(rel, r.direction).normalized();
    out.push_back(t);
  }
  return out;
}

/// Stratified samples in [t_near, t_far): bin midpoints, or one uniform draw
/// per bin when jittered. The last interval repeats the previous one.
inline RaySamples sample_along(const Ray& ray, int count, bool jitter = false,
                               std::uint64_t seed = 0) {
  if (count < 1) throw UsageError("sample_along: sample count must be >= 1");
  RaySamples s;
  s.ray = ray;
  s.depths.resize(static_cast<std::size_t>(count));
  s.deltas.resize(static_cast<std::size_t>(count));
  const double bin = (ray.t_far - ray.t_near) / count;
  Rng rng(seed);
  for (int m = 0; m < count; ++m) {
    const double offset = jitter ? rng.uniform() : 0.5;
    s.depths[static_cast<std::size_t>(m)] = ray.t_near + (m + offset) * bin;
  }
  for (int m = 0; m + 1 < count; ++m) {
    s.deltas[static_cast<std::size_t>(m)] =
        s.depths[static_cast<std::size_t>(m) + 1] - s.depths[static_cast<std::size_t>(m)];
  }
  s.deltas.back() = count == 1 ? ray.t_far - s.depths.back()
                               : s.deltas[static_cast<std::size_t>(count) - 2];
  return s;
}

inline RayLabel label_for(const scene::CameraLabels& labels, std::uint32_t px,
                          std::uint32_t py) {
  const auto idx = labels.index(px, py);
  RayLabel l;
  if (labels.has_depth()) l.depth = labels.depth[idx];
  if (labels.has_semantic()) l.semantic = labels.semantic[idx];
  if (labels.has_rgb()) {
    for (int c = 0; c < 3; ++c) l.rgb[c] = labels.rgb[3 * idx + c] / 255.0f;
  }
  return l;
}

/// Rays from every camera of frames [i - n, i + n] (clipped to the sequence),
/// moved into frame i's ego frame and labeled from the baked 2D labels of
/// their source frame.
inline RayBundle build_supervision_bundle(const scene::Scene& scene, int frame,
                                          int adjacent, std::uint32_t stride,
                                          RayBounds bounds = {}) {
  if (frame < 0 || frame >= scene.frame_count()) {
    throw UsageError(detail::concat("supervision frame ", frame,
                                    " outside the sequence"));
  }
  if (adjacent < 0) throw UsageError("adjacent-frame count must be >= 0");
  if (bounds.t_far <= 0.0) bounds = RayBounds::for_grid(scene.geometry(), bounds.t_near);
  const int first = std::max(0, frame - adjacent);
  const int last = std::min(scene.frame_count() - 1, frame + adjacent);
  RayBundle bundle;
  const Pose& target = scene.frames[static_cast<std::size_t>(frame)].pose;
  for (int j = first; j <= last; ++j) {
    const Pose& source = scene.frames[static_cast<std::size_t>(j)].pose;
    for (int c = 0; c < scene.camera_count(); ++c) {
      const auto& labels = scene.camera_labels(j, c);
      if (!labels.has_depth() || !labels.has_semantic() || !labels.has_rgb()) {
        throw DataError(detail::concat("missing baked labels for frame ", j,
                                       " camera ", c));
      }
      const auto& cam = scene.rig[static_cast<std::size_t>(c)];
      auto rays = transport_rays(pixel_rays(cam, stride, bounds, j, c), source, target);
      for (auto& r : rays) {
        bundle.labels.push_back(label_for(labels, r.source.px, r.source.py));
        bundle.rays.push_back(r);
      }
    }
  }
  return bundle;
}

}  // namespace occworld::render
