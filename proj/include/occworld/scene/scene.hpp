// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "occworld/core/camera.hpp"
#include "occworld/core/ego_state.hpp"
#include "occworld/core/grids.hpp"
#include "occworld/core/pose.hpp"

namespace occworld::scene {

/// Category IDs of the default synthetic taxonomy. "others" is 0 and the
/// free category is always the last ID.
enum Category : int {
  kOthers = 0,
  kGround = 1,
  kBuilding = 2,
  kPole = 3,
  kCar = 4,
  kPedestrian = 5,
  kBarrier = 6,
  kVegetation = 7,
  kFirstExtra = 8,
};

inline constexpr std::uint8_t kInvalidSemantic = 255;

struct Taxonomy {
  std::vector<std::string> names;                // includes "free" last
  std::vector<std::array<float, 3>> albedo;      // per category, [0, 1]
  std::vector<int> dynamic_categories;

  int size() const { return static_cast<int>(names.size()); }
  int free_category() const { return size() - 1; }
  /// Categories a ray can hit, i.e. everything except free.
  int semantic_categories() const { return size() - 1; }

  /// Default taxonomy with `num_categories` entries (at least 9: eight
  /// object categories and free).
  static Taxonomy standard(int num_categories = 9) {
    if (num_categories < 9 || num_categories > 255) {
      throw UsageError(detail::concat(
          "synthetic taxonomy needs between 9 and 255 categories, got ",
          num_categories));
    }
    Taxonomy t;
    t.names = {"others", "ground", "building", "pole", "car", "pedestrian",
               "barrier", "vegetation"};
    t.albedo = {{0.55f, 0.35f, 0.60f}, {0.35f, 0.35f, 0.38f}, {0.80f, 0.60f, 0.45f},
                {0.95f, 0.85f, 0.20f}, {0.85f, 0.15f, 0.15f}, {0.20f, 0.45f, 0.95f},
                {0.95f, 0.55f, 0.10f}, {0.15f, 0.70f, 0.25f}};
    for (int c = kFirstExtra; c < num_categories - 1; ++c) {
      t.names.push_back("extra" + std::to_string(c));
      const float v = 0.2f + 0.6f * static_cast<float>(c % 7) / 7.0f;
      t.albedo.push_back({v, 1.0f - v, 0.5f});
    }
    t.names.push_back("free");
    t.albedo.push_back({0.0f, 0.0f, 0.0f});
    t.dynamic_categories = {kCar, kPedestrian};
    return t;
  }

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;
};

struct ObjectCounts {
  int ground = 1;  // 0 or 1
  int buildings = 6;
  int parked_cars = 4;
  int moving_cars = 2;
  int pedestrians = 2;
  int poles = 4;
  int barriers = 2;
  int vegetation = 2;
  int others = 1;

  friend bool operator==(const ObjectCounts&, const ObjectCounts&) = default;
};

enum class MotionProfile { straight, arc, stop_and_go };

struct EgoMotionSpec {
  MotionProfile profile = MotionProfile::straight;
  double speed = 4.0;     // m/s, mean speed
  double yaw_rate = 0.1;  // rad/s, arc profile
  double period = 4.0;    // s, stop-and-go speed oscillation period

  friend bool operator==(const EgoMotionSpec&, const EgoMotionSpec&) = default;
};

struct RigSpec {
  int count = 2;  // evenly spaced in yaw, camera 0 faces forward
  double hfov = std::numbers::pi / 2.0;
  std::uint32_t width = 48;
  std::uint32_t height = 32;
  double mount_height = 1.5;
  double pitch = 0.2;  // rad, positive tilts down
  double forward_offset = 0.5;

  friend bool operator==(const RigSpec&, const RigSpec&) = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  GridGeometry geometry = GridGeometry::desk();
  int frame_count = 20;
  double dt = 0.5;
  int num_categories = 9;
  ObjectCounts objects{};
  double moving_speed_min = 1.0;  // m/s, moving cars
  double moving_speed_max = 4.0;
  EgoMotionSpec ego{};
  RigSpec rig{};
  int history_frames = 2;      // k
  int trajectory_horizon = 6;  // waypoints stored per frame

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Frame {
  double timestamp = 0.0;
  Pose pose;  // ego -> world
  EgoState ego;
  std::optional<SemanticGrid> grid;  // absent when withheld
  std::vector<Vec2> trajectory;      // future ego positions in this frame
};

/// Baked 2D supervision for one camera at one frame. Depth is the along-ray
/// distance to the first occupied voxel (0 when the ray escapes), semantic
/// is the hit category (kInvalidSemantic when the ray escapes), rgb is the
/// shaded albedo (black when the ray escapes). The RGB image doubles as the
/// camera input of the occupancy network.
struct CameraLabels {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> depth;
  std::vector<std::uint8_t> semantic;
  std::vector<std::uint8_t> rgb;  // interleaved, 3 per pixel

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * height;
  }
  bool has_depth() const { return !depth.empty(); }
  bool has_semantic() const { return !semantic.empty(); }
  bool has_rgb() const { return !rgb.empty(); }
  std::size_t index(std::uint32_t px, std::uint32_t py) const {
    return static_cast<std::size_t>(py) * width + px;
  }

  friend bool operator==(const CameraLabels&, const CameraLabels&) = default;
};

struct Scene {
  SceneSpec spec;
  Taxonomy taxonomy;
  std::vector<CameraModel> rig;
  std::vector<Frame> frames;
  /// labels[frame][camera]; empty until baked or loaded.
  std::vector<std::vector<CameraLabels>> labels;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int camera_count() const { return static_cast<int>(rig.size()); }
  const GridGeometry& geometry() const { return spec.geometry; }
  bool baked() const { return !labels.empty(); }

  const SemanticGrid& grid(int frame) const {
    const auto& g = frames.at(static_cast<std::size_t>(frame)).grid;
    if (!g) {
      throw DataError(detail::concat("ground-truth grid for frame ", frame,
                                     " is not available"));
    }
    return *g;
  }

  const CameraLabels& camera_labels(int frame, int camera) const {
    if (labels.empty() || frame < 0 || frame >= static_cast<int>(labels.size()) ||
        camera < 0 ||
        camera >= static_cast<int>(labels[static_cast<std::size_t>(frame)].size())) {
      throw DataError(detail::concat("missing baked labels for frame ", frame,
                                     " camera ", camera));
    }
    return labels[static_cast<std::size_t>(frame)][static_cast<std::size_t>(camera)];
  }
};

}  // namespace occworld::scene
