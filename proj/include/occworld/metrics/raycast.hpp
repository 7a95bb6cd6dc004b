// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exact voxel traversal (Amanatides-Woo) and first-hit queries.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "occworld/core/grids.hpp"
#include "occworld/render/raygen.hpp"

namespace occworld::metrics {

/// Parameter interval [t_enter, t_exit] of the ray inside the grid box,
/// clipped to t >= t_min. Empty when the ray misses the box.
inline std::optional<std::pair<double, double>> clip_to_box(const Vec3& lo, const Vec3& hi,
                                                            const Vec3& o, const Vec3& d,
                                                            double t_min = 0.0) {
  double t0 = t_min, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] >= hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;
  return std::make_pair(t0, t1);
}

/// Visits the voxels pierced by o + t d (t >= t_min, d non-zero) in order,
/// calling visit(linear index, t_enter, t_exit); traversal stops when visit
/// returns false or the ray leaves the grid.
template <typename Visit>
void traverse(const GridGeometry& g, const Vec3& o, const Vec3& d, Visit&& visit,
              double t_min = 0.0, double t_max = std::numeric_limits<double>::infinity()) {
  const auto box = clip_to_box(g.origin(), g.max_corner(), o, d, t_min);
  if (!box) return;
  double t = box->first;
  const double t_end = std::min(box->second, t_max);
  if (!(t < t_end)) return;
  const double res = g.resolution();
  const Vec3 p = o + t * d;
  const int n[3] = {static_cast<int>(g.dims().x), static_cast<int>(g.dims().y),
                    static_cast<int>(g.dims().z)};
  int idx[3], step[3];
  double t_next[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    idx[a] = std::clamp(static_cast<int>(std::floor((p[a] - g.origin()[a]) / res)), 0, n[a] - 1);
    if (d[a] > 0) {
      step[a] = 1;
      t_next[a] = (g.origin()[a] + (idx[a] + 1) * res - o[a]) / d[a];
      t_delta[a] = res / d[a];
    } else if (d[a] < 0) {
      step[a] = -1;
      t_next[a] = (g.origin()[a] + idx[a] * res - o[a]) / d[a];
      t_delta[a] = -res / d[a];
    } else {
      step[a] = 0;
      t_next[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }
  while (t < t_end) {
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    const double t_exit = std::min(t_next[axis], t_end);
    const std::size_t lin = g.linear_index({idx[0], idx[1], idx[2]});
    if (t_exit > t && !visit(lin, t, t_exit)) return;
    t = std::max(t, t_exit);
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= n[axis]) return;
    t_next[axis] += t_delta[axis];
  }
}

struct Hit {
  double depth = 0.0;
  int category = 0;
};

/// Entry depth and category of the first non-free voxel along the ray
/// (direction normalized internally), or empty when the ray leaves the grid
/// unoccluded.
inline std::optional<Hit> ray_cast_first_hit(const SemanticGrid& grid, const Vec3& origin,
                                             const Vec3& direction,
                                             double t_max = std::numeric_limits<double>::infinity()) {
  const Vec3 d = direction.normalized();
  std::optional<Hit> hit;
  traverse(
      grid.geometry(), origin, d,
      [&](std::size_t v, double t0, double) {
        if (grid.occupied(v)) {
          hit = Hit{t0, grid.at(v)};
          return false;
        }
        return true;
      },
      0.0, t_max);
  return hit;
}

inline std::optional<Hit> ray_cast_first_hit(const SemanticGrid& grid, const render::Ray& ray) {
  return ray_cast_first_hit(grid, ray.origin, ray.direction);
}

/// Voxels visible from the cameras: everything each pixel ray crosses up to
/// and including its first occupied voxel.
inline std::vector<char> visibility_mask(const SemanticGrid& grid,
                                         std::span<const CameraModel> cameras,
                                         std::uint32_t stride = 1) {
  std::vector<char> mask(grid.size(), 0);
  for (const auto& cam : cameras) {
    for (const auto& r : render::pixel_rays(cam, stride, {0.0, 1e9})) {
      traverse(grid.geometry(), r.origin, r.direction, [&](std::size_t v, double, double) {
        mask[v] = 1;
        return !grid.occupied(v);
      });
    }
  }
  return mask;
}

}  // namespace occworld::metrics
