// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Geometry>

#include <cmath>

#include "occworld/core/geometry.hpp"

namespace occworld {

/// Rigid transform p -> rotation * p + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  /// Planar pose: yaw about +z, then translation.
  static Pose from_yaw(double yaw, const Vec3& t) {
    return {Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(), t};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Pose from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  bool is_valid(double tol = 1e-6) const {
    return (rotation.transpose() * rotation - Mat3::Identity())
                   .cwiseAbs()
                   .maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol &&
           translation.allFinite();
  }

  /// Yaw of the rotated +x axis in the xy plane.
  double yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }
};

inline Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose inverse(const Pose& a) {
  const Mat3 rt = a.rotation.transpose();
  return {rt, -(rt * a.translation)};
}

inline Vec3 transform_point(const Pose& a, const Vec3& p) {
  return a.rotation * p + a.translation;
}

inline Vec3 transform_vector(const Pose& a, const Vec3& v) {
  return a.rotation * v;
}

/// Transform taking coordinates in `from`'s frame to `to`'s frame, for poses
/// that both map their local frame into a shared world frame.
inline Pose relative_pose(const Pose& from, const Pose& to) {
  return compose(inverse(to), from);
}

}  // namespace occworld
