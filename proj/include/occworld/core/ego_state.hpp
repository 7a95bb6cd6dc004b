// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "occworld/core/geometry.hpp"

namespace occworld {

/// Kinematic summary of the ego vehicle at one frame. History waypoints are
/// the previous k positions (most recent first) in the current ego frame;
/// frames before the start of a sequence are zero and flagged as padding.
struct EgoState {
  double speed = 0.0;         // m/s
  double acceleration = 0.0;  // m/s^2
  double yaw_rate = 0.0;      // rad/s
  std::vector<Vec2> history;
  std::vector<bool> padded;

  static EgoState zero(std::size_t k) {
    EgoState s;
    s.history.assign(k, Vec2::Zero());
    s.padded.assign(k, true);
    return s;
  }

  std::size_t history_length() const { return history.size(); }

  /// Length of the flattened network input for history length `k`.
  static std::size_t feature_size(std::size_t k) { return 3 + 3 * k; }

  /// Flattened network input: [speed, accel, yaw rate, (x, y) * k,
  /// valid flags * k], metric quantities scaled by 0.1. A zero state maps to
  /// the zero vector.
  std::vector<double> features() const {
    std::vector<double> f;
    f.reserve(feature_size(history.size()));
    f.push_back(0.1 * speed);
    f.push_back(0.1 * acceleration);
    f.push_back(yaw_rate);
    for (const auto& h : history) {
      f.push_back(0.1 * h.x());
      f.push_back(0.1 * h.y());
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const bool pad = i < padded.size() ? padded[i] : true;
      f.push_back(pad ? 0.0 : 1.0);
    }
    return f;
  }

  friend bool operator==(const EgoState&, const EgoState&) = default;
};

}  // namespace occworld
