// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>

#include "occworld/core/error.hpp"

namespace occworld {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct VoxelIndex {
  int i = 0;
  int j = 0;
  int k = 0;

  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

struct GridDims {
  std::uint32_t x = 1;
  std::uint32_t y = 1;
  std::uint32_t z = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
           static_cast<std::size_t>(z);
  }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Dense voxel lattice registered in the ego frame. Voxel (i, j, k) covers
/// [origin + res*(i,j,k), origin + res*(i+1,j+1,k+1)); storage is row-major
/// with x varying fastest.
class GridGeometry {
 public:
  GridGeometry() = default;

  GridGeometry(GridDims dims, double resolution, Vec3 origin)
      : dims_(dims), resolution_(resolution), origin_(std::move(origin)) {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1) {
      throw UsageError(detail::concat("grid dims must be >= 1, got ", dims.x,
                                      "x", dims.y, "x", dims.z));
    }
    if (!(resolution > 0.0) || !std::isfinite(resolution)) {
      throw UsageError(detail::concat("grid resolution must be > 0, got ",
                                      resolution));
    }
  }

  /// Occ3D-nuScenes layout: 200x200x16 at 0.4 m covering
  /// [-40, 40] x [-40, 40] x [-1, 5.4].
  static GridGeometry reference() {
    return GridGeometry({200, 200, 16}, 0.4, Vec3(-40.0, -40.0, -1.0));
  }

  /// Desk-scale layout used by tests and the default pipeline.
  static GridGeometry desk() {
    return GridGeometry({32, 32, 8}, 0.5, Vec3(-8.0, -8.0, -1.0));
  }

  const GridDims& dims() const { return dims_; }
  double resolution() const { return resolution_; }
  const Vec3& origin() const { return origin_; }
  std::size_t voxel_count() const { return dims_.count(); }

  Vec3 extent() const {
    return Vec3(dims_.x, dims_.y, dims_.z) * resolution_;
  }
  Vec3 max_corner() const { return origin_ + extent(); }
  double diagonal() const { return extent().norm(); }

  bool contains(const VoxelIndex& v) const {
    return v.i >= 0 && v.j >= 0 && v.k >= 0 &&
           v.i < static_cast<int>(dims_.x) && v.j < static_cast<int>(dims_.y) &&
           v.k < static_cast<int>(dims_.z);
  }

  std::size_t linear_index(const VoxelIndex& v) const {
    return static_cast<std::size_t>(v.i) +
           static_cast<std::size_t>(dims_.x) *
               (static_cast<std::size_t>(v.j) +
                static_cast<std::size_t>(dims_.y) * static_cast<std::size_t>(v.k));
  }

  VoxelIndex unravel(std::size_t linear) const {
    VoxelIndex v;
    v.i = static_cast<int>(linear % dims_.x);
    linear /= dims_.x;
    v.j = static_cast<int>(linear % dims_.y);
    v.k = static_cast<int>(linear / dims_.y);
    return v;
  }

  Vec3 voxel_center(const VoxelIndex& v) const {
    return origin_ + resolution_ * Vec3(v.i + 0.5, v.j + 0.5, v.k + 0.5);
  }

  Vec3 voxel_center(std::size_t linear) const {
    return voxel_center(unravel(linear));
  }

  /// Floor binning, half-open on the max faces.
  std::optional<VoxelIndex> world_to_voxel(const Vec3& p) const {
    const Vec3 g = (p - origin_) / resolution_;
    if (!(g.x() >= 0.0 && g.y() >= 0.0 && g.z() >= 0.0)) return std::nullopt;
    if (!(g.x() < dims_.x && g.y() < dims_.y && g.z() < dims_.z)) {
      return std::nullopt;
    }
    VoxelIndex v{static_cast<int>(std::floor(g.x())),
                 static_cast<int>(std::floor(g.y())),
                 static_cast<int>(std::floor(g.z()))};
    if (!contains(v)) return std::nullopt;
    return v;
  }

  /// Voxel center coordinates mapped to [-1, 1] per axis.
  Vec3 normalized_center(const VoxelIndex& v) const {
    return Vec3(2.0 * (v.i + 0.5) / dims_.x - 1.0,
                2.0 * (v.j + 0.5) / dims_.y - 1.0,
                2.0 * (v.k + 0.5) / dims_.z - 1.0);
  }

  friend bool operator==(const GridGeometry& a, const GridGeometry& b) {
    return a.dims_ == b.dims_ && a.resolution_ == b.resolution_ &&
           a.origin_ == b.origin_;
  }

 private:
  GridDims dims_{};
  double resolution_ = 1.0;
  Vec3 origin_ = Vec3::Zero();
};

inline std::optional<VoxelIndex> world_to_voxel(const Vec3& p,
                                                const GridGeometry& g) {
  return g.world_to_voxel(p);
}

}  // namespace occworld
