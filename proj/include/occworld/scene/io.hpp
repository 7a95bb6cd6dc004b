// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene directories:
//   scene.json                       spec, taxonomy, rig, poses, ego states
//   grids/frame_NNNN.occg            ground-truth grid per frame
//   labels/frame_NNNN_camC.{depth.f32,sem.u8,rgb.u8}
// Label files carry a 16-byte header (magic, u16 version, u16 channels,
// u32 width, u32 height) followed by raw little-endian pixels.

#include <cstdio>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "occworld/core/binary_io.hpp"
#include "occworld/core/occg.hpp"
#include "occworld/scene/scene.hpp"

namespace occworld::scene {

using Json = nlohmann::json;

inline constexpr int kSceneFormatVersion = 1;
inline constexpr std::uint16_t kLabelVersion = 1;

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail_io {

inline Json vec(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json vec(const Vec2& v) { return Json::array({v.x(), v.y()}); }

inline Vec3 vec3(const Json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }
inline Vec2 vec2(const Json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); }

/// 3x4 row-major [R | t].
inline Json pose(const Pose& p) {
  Json rows = Json::array();
  for (int r = 0; r < 3; ++r) {
    rows.push_back(Json::array({p.rotation(r, 0), p.rotation(r, 1), p.rotation(r, 2),
                                p.translation(r)}));
  }
  return rows;
}

inline Pose pose(const Json& j) {
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j.at(r).at(c).get<double>();
    p.translation(r) = j.at(r).at(3).get<double>();
  }
  return p;
}

inline const char* profile_name(MotionProfile p) {
  switch (p) {
    case MotionProfile::straight: return "straight";
    case MotionProfile::arc: return "arc";
    case MotionProfile::stop_and_go: return "stop_and_go";
  }
  return "straight";
}

inline MotionProfile profile_from(const std::string& s) {
  if (s == "straight") return MotionProfile::straight;
  if (s == "arc") return MotionProfile::arc;
  if (s == "stop_and_go") return MotionProfile::stop_and_go;
  throw DataError("unknown ego motion profile '" + s + "'");
}

/// Reads `key` into `out` when present.
template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail_io

inline Json geometry_to_json(const GridGeometry& g) {
  return {{"dims", {g.dims().x, g.dims().y, g.dims().z}},
          {"resolution", g.resolution()},
          {"origin", detail_io::vec(g.origin())}};
}

inline GridGeometry geometry_from_json(const Json& j) {
  const auto& d = j.at("dims");
  return GridGeometry({d.at(0).get<std::uint32_t>(), d.at(1).get<std::uint32_t>(),
                       d.at(2).get<std::uint32_t>()},
                      j.at("resolution").get<double>(), detail_io::vec3(j.at("origin")));
}

inline Json spec_to_json(const SceneSpec& s) {
  const auto& o = s.objects;
  return {{"seed", s.seed},
          {"geometry", geometry_to_json(s.geometry)},
          {"frame_count", s.frame_count},
          {"dt", s.dt},
          {"num_categories", s.num_categories},
          {"objects",
           {{"ground", o.ground},
            {"buildings", o.buildings},
            {"parked_cars", o.parked_cars},
            {"moving_cars", o.moving_cars},
            {"pedestrians", o.pedestrians},
            {"poles", o.poles},
            {"barriers", o.barriers},
            {"vegetation", o.vegetation},
            {"others", o.others}}},
          {"moving_speed_min", s.moving_speed_min},
          {"moving_speed_max", s.moving_speed_max},
          {"ego",
           {{"profile", detail_io::profile_name(s.ego.profile)},
            {"speed", s.ego.speed},
            {"yaw_rate", s.ego.yaw_rate},
            {"period", s.ego.period}}},
          {"rig",
           {{"count", s.rig.count},
            {"hfov", s.rig.hfov},
            {"width", s.rig.width},
            {"height", s.rig.height},
            {"mount_height", s.rig.mount_height},
            {"pitch", s.rig.pitch},
            {"forward_offset", s.rig.forward_offset}}},
          {"history_frames", s.history_frames},
          {"trajectory_horizon", s.trajectory_horizon}};
}

/// Missing keys keep their defaults, so a spec file only lists overrides.
inline SceneSpec spec_from_json(const Json& j) {
  using detail_io::maybe;
  SceneSpec s;
  try {
    maybe(j, "seed", s.seed);
    if (j.contains("geometry")) s.geometry = geometry_from_json(j.at("geometry"));
    maybe(j, "frame_count", s.frame_count);
    maybe(j, "dt", s.dt);
    maybe(j, "num_categories", s.num_categories);
    if (j.contains("objects")) {
      const auto& o = j.at("objects");
      maybe(o, "ground", s.objects.ground);
      maybe(o, "buildings", s.objects.buildings);
      maybe(o, "parked_cars", s.objects.parked_cars);
      maybe(o, "moving_cars", s.objects.moving_cars);
      maybe(o, "pedestrians", s.objects.pedestrians);
      maybe(o, "poles", s.objects.poles);
      maybe(o, "barriers", s.objects.barriers);
      maybe(o, "vegetation", s.objects.vegetation);
      maybe(o, "others", s.objects.others);
    }
    maybe(j, "moving_speed_min", s.moving_speed_min);
    maybe(j, "moving_speed_max", s.moving_speed_max);
    if (j.contains("ego")) {
      const auto& e = j.at("ego");
      if (e.contains("profile")) s.ego.profile = detail_io::profile_from(e.at("profile"));
      maybe(e, "speed", s.ego.speed);
      maybe(e, "yaw_rate", s.ego.yaw_rate);
      maybe(e, "period", s.ego.period);
    }
    if (j.contains("rig")) {
      const auto& r = j.at("rig");
      maybe(r, "count", s.rig.count);
      maybe(r, "hfov", s.rig.hfov);
      maybe(r, "width", s.rig.width);
      maybe(r, "height", s.rig.height);
      maybe(r, "mount_height", s.rig.mount_height);
      maybe(r, "pitch", s.rig.pitch);
      maybe(r, "forward_offset", s.rig.forward_offset);
    }
    maybe(j, "history_frames", s.history_frames);
    maybe(j, "trajectory_horizon", s.trajectory_horizon);
  } catch (const Json::exception& e) {
    throw DataError(std::string("scene spec: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Label files

namespace detail_io {

struct LabelKind {
  const char* magic;
  const char* suffix;
  std::uint16_t channels;
};

inline constexpr LabelKind kDepth{"OCLD", "depth.f32", 1};
inline constexpr LabelKind kSemantic{"OCLS", "sem.u8", 1};
inline constexpr LabelKind kRgb{"OCLR", "rgb.u8", 3};

inline void write_label_header(std::ostream& os, const LabelKind& k, std::uint32_t w,
                               std::uint32_t h) {
  os.write(k.magic, 4);
  io::write_uint(os, kLabelVersion);
  io::write_uint(os, k.channels);
  io::write_uint(os, w);
  io::write_uint(os, h);
}

inline std::pair<std::uint32_t, std::uint32_t> read_label_header(io::Reader& r,
                                                                 const LabelKind& k) {
  r.expect_magic(k.magic);
  const auto version = r.read_uint<std::uint16_t>();
  if (version != kLabelVersion) {
    throw DataError(detail::concat(r.context(), ": unsupported label file version ", version,
                                   " (expected ", kLabelVersion, ")"));
  }
  const auto channels = r.read_uint<std::uint16_t>();
  if (channels != k.channels) {
    throw DataError(detail::concat(r.context(), ": expected ", k.channels, " channels, got ",
                                   channels));
  }
  const auto w = r.read_uint<std::uint32_t>(), h = r.read_uint<std::uint32_t>();
  return {w, h};
}

}  // namespace detail_io

inline std::filesystem::path grid_path(const std::filesystem::path& dir, int frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04d.occg", frame);
  return dir / "grids" / name;
}

inline std::filesystem::path label_path(const std::filesystem::path& dir, int frame, int camera,
                                        const char* suffix) {
  char name[64];
  std::snprintf(name, sizeof(name), "frame_%04d_cam%d.%s", frame, camera, suffix);
  return dir / "labels" / name;
}

inline void save_camera_labels(const std::filesystem::path& dir, int frame, int camera,
                               const CameraLabels& l) {
  using namespace detail_io;
  {
    auto os = io::open_output(label_path(dir, frame, camera, kDepth.suffix));
    write_label_header(os, kDepth, l.width, l.height);
    for (float v : l.depth) io::write_f32(os, v);
  }
  {
    auto os = io::open_output(label_path(dir, frame, camera, kSemantic.suffix));
    write_label_header(os, kSemantic, l.width, l.height);
    io::write_bytes(os, l.semantic.data(), l.semantic.size());
  }
  {
    auto os = io::open_output(label_path(dir, frame, camera, kRgb.suffix));
    write_label_header(os, kRgb, l.width, l.height);
    io::write_bytes(os, l.rgb.data(), l.rgb.size());
  }
}

/// Reads the RGB image and/or the depth and semantic maps of one camera.
inline CameraLabels load_camera_labels(const std::filesystem::path& dir, int frame, int camera,
                                       const CameraModel& cam, bool images = true,
                                       bool supervision = true) {
  using namespace detail_io;
  CameraLabels l;
  l.width = cam.width();
  l.height = cam.height();
  const auto open = [&](const LabelKind& k, auto&& body) {
    const auto path = label_path(dir, frame, camera, k.suffix);
    auto is = io::open_input(path);
    io::Reader r(is, path.string());
    const auto [w, h] = read_label_header(r, k);
    if (w != l.width || h != l.height) {
      throw DataError(detail::concat(path.string(), ": image is ", w, "x", h, ", camera is ",
                                     l.width, "x", l.height));
    }
    body(r);
    r.expect_end();
  };
  if (supervision) {
    open(kDepth, [&](io::Reader& r) {
      l.depth.resize(l.pixel_count());
      for (auto& v : l.depth) v = r.read_f32();
    });
    open(kSemantic, [&](io::Reader& r) {
      l.semantic.resize(l.pixel_count());
      r.read_exact(l.semantic.data(), l.semantic.size());
    });
  }
  if (images) {
    open(kRgb, [&](io::Reader& r) {
      l.rgb.resize(3 * l.pixel_count());
      r.read_exact(l.rgb.data(), l.rgb.size());
    });
  }
  return l;
}

// ---------------------------------------------------------------------------
// Scene directories

inline Json scene_to_json(const Scene& s) {
  Json j;
  j["format_version"] = kSceneFormatVersion;
  j["spec"] = spec_to_json(s.spec);
  Json tax;
  tax["names"] = s.taxonomy.names;
  tax["albedo"] = s.taxonomy.albedo;
  tax["dynamic_categories"] = s.taxonomy.dynamic_categories;
  j["taxonomy"] = tax;
  Json rig = Json::array();
  for (const auto& c : s.rig) {
    const auto& k = c.intrinsics();
    rig.push_back({{"fx", k.fx},
                   {"fy", k.fy},
                   {"cx", k.cx},
                   {"cy", k.cy},
                   {"width", c.width()},
                   {"height", c.height()},
                   {"extrinsic", detail_io::pose(c.extrinsic())}});
  }
  j["rig"] = rig;
  Json frames = Json::array();
  for (const auto& f : s.frames) {
    Json hist = Json::array(), traj = Json::array();
    for (const auto& h : f.ego.history) hist.push_back(detail_io::vec(h));
    for (const auto& p : f.trajectory) traj.push_back(detail_io::vec(p));
    std::vector<int> padded(f.ego.padded.begin(), f.ego.padded.end());
    frames.push_back({{"timestamp", f.timestamp},
                      {"pose", detail_io::pose(f.pose)},
                      {"ego",
                       {{"speed", f.ego.speed},
                        {"acceleration", f.ego.acceleration},
                        {"yaw_rate", f.ego.yaw_rate},
                        {"history", hist},
                        {"padded", padded}}},
                      {"trajectory", traj},
                      {"has_grid", f.grid.has_value()}});
  }
  j["frames"] = frames;
  j["baked"] = s.baked();
  return j;
}

/// Writes the scene directory. Grids and labels are written when present.
inline void save_scene(const Scene& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto os = io::open_output(dir / "scene.json");
    os << scene_to_json(s).dump(1) << "\n";
  }
  for (int f = 0; f < s.frame_count(); ++f) {
    const auto& g = s.frames[static_cast<std::size_t>(f)].grid;
    if (g) save_semantic_grid(grid_path(dir, f), *g);
  }
  for (std::size_t f = 0; f < s.labels.size(); ++f) {
    for (std::size_t c = 0; c < s.labels[f].size(); ++c) {
      save_camera_labels(dir, static_cast<int>(f), static_cast<int>(c), s.labels[f][c]);
    }
  }
}

/// Which parts of a scene directory to read. Training stages load only what
/// they are allowed to see, so withheld files never get opened.
struct LoadOptions {
  bool grids = true;
  /// Camera RGB images, the model input.
  bool images = true;
  /// Baked depth and semantic maps, the 2D supervision.
  bool supervision = true;
};

inline Scene load_scene(const std::filesystem::path& dir, LoadOptions opt = {}) {
  const auto manifest = dir / "scene.json";
  Json j;
  {
    auto is = io::open_input(manifest);
    try {
      j = Json::parse(is);
    } catch (const Json::exception& e) {
      throw DataError(manifest.string() + ": " + e.what());
    }
  }
  Scene s;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kSceneFormatVersion) {
      throw DataError(detail::concat(manifest.string(), ": unsupported scene format version ",
                                     version, " (expected ", kSceneFormatVersion, ")"));
    }
    s.spec = spec_from_json(j.at("spec"));
    const auto& tax = j.at("taxonomy");
    s.taxonomy.names = tax.at("names").get<std::vector<std::string>>();
    s.taxonomy.albedo = tax.at("albedo").get<std::vector<std::array<float, 3>>>();
    s.taxonomy.dynamic_categories = tax.at("dynamic_categories").get<std::vector<int>>();
    if (s.taxonomy.size() != s.spec.num_categories ||
        s.taxonomy.albedo.size() != s.taxonomy.names.size()) {
      throw DataError(manifest.string() + ": taxonomy does not match num_categories");
    }
    for (const auto& c : j.at("rig")) {
      s.rig.emplace_back(Intrinsics{c.at("fx").get<double>(), c.at("fy").get<double>(),
                                    c.at("cx").get<double>(), c.at("cy").get<double>()},
                         c.at("width").get<std::uint32_t>(), c.at("height").get<std::uint32_t>(),
                         detail_io::pose(c.at("extrinsic")));
    }
    int index = 0;
    for (const auto& fj : j.at("frames")) {
      Frame f;
      f.timestamp = fj.at("timestamp").get<double>();
      f.pose = detail_io::pose(fj.at("pose"));
      const auto& e = fj.at("ego");
      f.ego.speed = e.at("speed").get<double>();
      f.ego.acceleration = e.at("acceleration").get<double>();
      f.ego.yaw_rate = e.at("yaw_rate").get<double>();
      for (const auto& h : e.at("history")) f.ego.history.push_back(detail_io::vec2(h));
      for (int p : e.at("padded").get<std::vector<int>>()) f.ego.padded.push_back(p != 0);
      for (const auto& p : fj.at("trajectory")) f.trajectory.push_back(detail_io::vec2(p));
      if (opt.grids && fj.at("has_grid").get<bool>()) {
        f.grid = load_semantic_grid(grid_path(dir, index), s.spec.num_categories);
        if (!approx_same_geometry(f.grid->geometry(), s.spec.geometry)) {
          throw DataError(grid_path(dir, index).string() + ": grid geometry differs from spec");
        }
      }
      s.frames.push_back(std::move(f));
      ++index;
    }
    if ((opt.images || opt.supervision) && j.at("baked").get<bool>()) {
      s.labels.resize(s.frames.size());
      for (int f = 0; f < s.frame_count(); ++f) {
        for (int c = 0; c < s.camera_count(); ++c) {
          s.labels[static_cast<std::size_t>(f)].push_back(
              load_camera_labels(dir, f, c, s.rig[static_cast<std::size_t>(c)], opt.images,
                                 opt.supervision));
        }
      }
    }
  } catch (const Json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  } catch (const UsageError& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  return s;
}

}  // namespace occworld::scene
