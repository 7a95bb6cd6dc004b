// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "occworld/core/pose.hpp"

namespace occworld {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
};

/// Continuous pixel coordinates; pixel (px, py) has its center at
/// (px + 0.5, py + 0.5).
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

struct Projection {
  PixelCoord pixel;
  double depth = 0.0;  // along the optical axis
};

/// Pinhole camera. Camera axes follow x right, y down, z forward; the
/// extrinsic maps camera coordinates into the ego frame.
class CameraModel {
 public:
  CameraModel() = default;

  CameraModel(Intrinsics k, std::uint32_t width, std::uint32_t height,
              Pose extrinsic)
      : k_(k), width_(width), height_(height), extrinsic_(std::move(extrinsic)),
        ego_to_camera_(inverse(extrinsic_)) {
    if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
      throw UsageError("camera focal lengths must be positive");
    }
    if (width == 0 || height == 0) {
      throw UsageError("camera image must be non-empty");
    }
    if (!(k.cx > 0.0 && k.cx < width) || !(k.cy > 0.0 && k.cy < height)) {
      throw UsageError("camera principal point must lie inside the image");
    }
    if (!extrinsic_.is_valid()) {
      throw UsageError("camera extrinsic is not a rigid transform");
    }
  }

  /// Camera looking along ego-frame yaw `yaw`, tilted down by `pitch`,
  /// mounted at `position`, with horizontal field of view `hfov`.
  static CameraModel looking(double yaw, double pitch, const Vec3& position,
                             double hfov, std::uint32_t width,
                             std::uint32_t height) {
    const Vec3 forward(std::cos(yaw) * std::cos(pitch),
                       std::sin(yaw) * std::cos(pitch), -std::sin(pitch));
    const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = forward;
    const double f = 0.5 * width / std::tan(0.5 * hfov);
    return CameraModel({f, f, 0.5 * width, 0.5 * height}, width, height,
                       Pose{r, position});
  }

  const Intrinsics& intrinsics() const { return k_; }
  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  const Pose& extrinsic() const { return extrinsic_; }
  Vec3 center() const { return extrinsic_.translation; }

  /// Projects an ego-frame point; empty when it is behind the camera or
  /// outside the image.
  std::optional<Projection> project(const Vec3& p_ego,
                                    double min_depth = 1e-6) const {
    const Vec3 pc = transform_point(ego_to_camera_, p_ego);
    if (!(pc.z() > min_depth)) return std::nullopt;
    const PixelCoord px{k_.fx * pc.x() / pc.z() + k_.cx,
                        k_.fy * pc.y() / pc.z() + k_.cy};
    if (!(px.u >= 0.0 && px.u < width_ && px.v >= 0.0 && px.v < height_)) {
      return std::nullopt;
    }
    return Projection{px, pc.z()};
  }

  /// Ego-frame point at optical-axis depth `depth` behind pixel `px`.
  Vec3 unproject(const PixelCoord& px, double depth) const {
    const Vec3 pc((px.u - k_.cx) / k_.fx * depth, (px.v - k_.cy) / k_.fy * depth,
                  depth);
    return transform_point(extrinsic_, pc);
  }

  /// Unit ego-frame direction through `px`.
  Vec3 ray_direction(const PixelCoord& px) const {
    const Vec3 dc((px.u - k_.cx) / k_.fx, (px.v - k_.cy) / k_.fy, 1.0);
    return transform_vector(extrinsic_, dc).normalized();
  }

  Vec3 forward() const { return extrinsic_.rotation.col(2); }

 private:
  Intrinsics k_{};
  std::uint32_t width_ = 1;
  std::uint32_t height_ = 1;
  Pose extrinsic_{};
  Pose ego_to_camera_{};
};

}  // namespace occworld
