// SPDX-License-Identifier: Apache-2.0
#pragma once

// Occupancy and planning metrics: voxel confusion / mIoU, ray-based IoU,
// trajectory L2 error, collision rate and the copy-paste forecast baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "occworld/core/pose.hpp"
#include "occworld/metrics/raycast.hpp"

namespace occworld::metrics {

inline void require_same_geometry(const SemanticGrid& a, const SemanticGrid& b) {
  if (!approx_same_geometry(a.geometry(), b.geometry()) ||
      a.num_categories() != b.num_categories()) {
    throw DataError("prediction and ground truth differ in geometry or category count");
  }
}

/// Per-category TP/FP/FN tallies plus the occupied-vs-free tallies.
struct ConfusionCounts {
  std::vector<std::uint64_t> tp, fp, fn;
  std::uint64_t geo_tp = 0, geo_fp = 0, geo_fn = 0;
  int free_category = 0;

  ConfusionCounts() = default;
  explicit ConfusionCounts(int num_categories)
      : tp(static_cast<std::size_t>(num_categories), 0),
        fp(static_cast<std::size_t>(num_categories), 0),
        fn(static_cast<std::size_t>(num_categories), 0),
        free_category(num_categories - 1) {}

  int num_categories() const { return static_cast<int>(tp.size()); }

  /// Adds one grid pair; voxels with mask 0 are skipped.
  void add(const SemanticGrid& pred, const SemanticGrid& gt, std::span<const char> mask = {}) {
    require_same_geometry(pred, gt);
    if (tp.empty()) *this = ConfusionCounts(gt.num_categories());
    if (gt.num_categories() != num_categories()) {
      throw DataError("confusion counts built for a different category count");
    }
    if (!mask.empty() && mask.size() != gt.size()) {
      throw DataError(detail::concat("visibility mask has ", mask.size(), " entries for ",
                                     gt.size(), " voxels"));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const auto p = pred.at(i), g = gt.at(i);
      if (p == g) {
        ++tp[p];
      } else {
        ++fp[p];
        ++fn[g];
      }
      const bool po = p != free_category, go = g != free_category;
      geo_tp += po && go;
      geo_fp += po && !go;
      geo_fn += !po && go;
    }
  }

  void merge(const ConfusionCounts& o) {
    if (o.tp.empty()) return;
    if (tp.empty()) {
      *this = o;
      return;
    }
    if (o.num_categories() != num_categories()) throw DataError("merging mismatched confusion counts");
    for (std::size_t c = 0; c < tp.size(); ++c) {
      tp[c] += o.tp[c];
      fp[c] += o.fp[c];
      fn[c] += o.fn[c];
    }
    geo_tp += o.geo_tp;
    geo_fp += o.geo_fp;
    geo_fn += o.geo_fn;
  }
};

struct MiouReport {
  double miou = 1.0;
  /// NaN for categories absent from both prediction and ground truth; the
  /// free category is reported but never averaged.
  std::vector<double> per_category;
  double iou_geo = 1.0;
};

inline double ratio_or_nan(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const auto den = tp + fp + fn;
  return den == 0 ? std::numeric_limits<double>::quiet_NaN()
                  : static_cast<double>(tp) / static_cast<double>(den);
}

/// mIoU averages the non-free categories present in prediction or ground
/// truth; with none present the prediction is trivially exact and scores 1.
inline MiouReport report(const ConfusionCounts& c) {
  MiouReport r;
  double sum = 0;
  int n = 0;
  for (int k = 0; k < c.num_categories(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double iou = ratio_or_nan(c.tp[i], c.fp[i], c.fn[i]);
    r.per_category.push_back(iou);
    if (k != c.free_category && !std::isnan(iou)) {
      sum += iou;
      ++n;
    }
  }
  r.miou = n ? sum / n : 1.0;
  const double geo = ratio_or_nan(c.geo_tp, c.geo_fp, c.geo_fn);
  r.iou_geo = std::isnan(geo) ? 1.0 : geo;
  return r;
}

inline MiouReport miou(const SemanticGrid& pred, const SemanticGrid& gt,
                       std::span<const char> mask = {}) {
  ConfusionCounts c(gt.num_categories());
  c.add(pred, gt, mask);
  return report(c);
}

// ------------------------------------------------------------------ RayIoU

inline const std::vector<double>& default_ray_thresholds() {
  static const std::vector<double> t{1.0, 2.0, 4.0};
  return t;
}

struct QueryLattice {
  int azimuths = 360;
  int elevations = 20;
  double min_elevation = -25.0 * std::numbers::pi / 180.0;
  double max_elevation = 15.0 * std::numbers::pi / 180.0;
  Vec3 origin = Vec3(0.0, 0.0, 1.0);
};

/// Spherical bundle of query rays from the ego origin, bin-centered in
/// azimuth and elevation.
inline std::vector<render::Ray> query_rays(const QueryLattice& q = {}) {
  if (q.azimuths < 1 || q.elevations < 1) throw UsageError("query lattice must be non-empty");
  std::vector<render::Ray> rays;
  rays.reserve(static_cast<std::size_t>(q.azimuths) * static_cast<std::size_t>(q.elevations));
  for (int e = 0; e < q.elevations; ++e) {
    const double el =
        q.min_elevation + (q.max_elevation - q.min_elevation) * (e + 0.5) / q.elevations;
    for (int a = 0; a < q.azimuths; ++a) {
      const double az = 2.0 * std::numbers::pi * (a + 0.5) / q.azimuths;
      render::Ray r;
      r.origin = q.origin;
      r.direction = Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      r.t_near = 0.0;
      r.t_far = std::numeric_limits<double>::infinity();
      rays.push_back(r);
    }
  }
  return rays;
}

struct RayCounts {
  std::vector<std::uint64_t> tp, fp, fn;

  explicit RayCounts(int c = 0)
      : tp(static_cast<std::size_t>(c), 0), fp(static_cast<std::size_t>(c), 0),
        fn(static_cast<std::size_t>(c), 0) {}

  /// Mean TP/(TP+FP+FN) over categories with any tally; 1 when no ray hit
  /// anything in either grid.
  double iou() const {
    double s = 0;
    int n = 0;
    for (std::size_t c = 0; c < tp.size(); ++c) {
      const double v = ratio_or_nan(tp[c], fp[c], fn[c]);
      if (std::isnan(v)) continue;
      s += v;
      ++n;
    }
    return n ? s / n : 1.0;
  }

  friend bool operator==(const RayCounts&, const RayCounts&) = default;
};

struct RayIoUReport {
  std::vector<double> thresholds;
  std::vector<RayCounts> counts;  // one per threshold
  std::vector<double> per_threshold;
  double mean = 1.0;
};

/// Tallies one ray's outcome for every threshold.
inline void tally_ray(const std::optional<Hit>& p, const std::optional<Hit>& g,
                      std::span<const double> thresholds, std::vector<RayCounts>& counts) {
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    auto& c = counts[k];
    const bool match = p && g && p->category == g->category &&
                       std::abs(p->depth - g->depth) < thresholds[k];
    if (match) {
      ++c.tp[static_cast<std::size_t>(p->category)];
      continue;
    }
    if (p) ++c.fp[static_cast<std::size_t>(p->category)];
    if (g) ++c.fn[static_cast<std::size_t>(g->category)];
  }
}

inline RayIoUReport finish_ray_iou(std::vector<double> thresholds, std::vector<RayCounts> counts) {
  RayIoUReport r;
  r.thresholds = std::move(thresholds);
  r.counts = std::move(counts);
  double s = 0;
  for (const auto& c : r.counts) {
    r.per_threshold.push_back(c.iou());
    s += r.per_threshold.back();
  }
  r.mean = r.counts.empty() ? 1.0 : s / static_cast<double>(r.counts.size());
  return r;
}

/// Accumulates counts over several grid pairs before forming the ratios.
class RayIoUAccumulator {
 public:
  explicit RayIoUAccumulator(int num_categories,
                             std::vector<double> thresholds = default_ray_thresholds())
      : thresholds_(std::move(thresholds)), counts_(thresholds_.size(), RayCounts(num_categories)) {
    for (std::size_t i = 1; i < thresholds_.size(); ++i) {
      if (!(thresholds_[i] > thresholds_[i - 1])) {
        throw UsageError("RayIoU thresholds must be strictly increasing");
      }
    }
  }

  void add(const SemanticGrid& pred, const SemanticGrid& gt, std::span<const render::Ray> rays) {
    require_same_geometry(pred, gt);
    if (static_cast<std::size_t>(gt.num_categories()) != counts_.front().tp.size()) {
      throw DataError("RayIoU accumulator built for a different category count");
    }
    for (const auto& r : rays) {
      tally_ray(ray_cast_first_hit(pred, r), ray_cast_first_hit(gt, r), thresholds_, counts_);
    }
  }

  RayIoUReport report() const { return finish_ray_iou(thresholds_, counts_); }

 private:
  std::vector<double> thresholds_;
  std::vector<RayCounts> counts_;
};

inline RayIoUReport ray_iou(const SemanticGrid& pred, const SemanticGrid& gt,
                            std::span<const render::Ray> rays,
                            std::vector<double> thresholds = default_ray_thresholds()) {
  RayIoUAccumulator acc(gt.num_categories(), std::move(thresholds));
  acc.add(pred, gt, rays);
  return acc.report();
}

// ------------------------------------------------------------ planning

inline const std::vector<double>& default_horizons() {
  static const std::vector<double> h{1.0, 2.0, 3.0};
  return h;
}

/// Waypoint index reached at `seconds` with frame interval `dt`.
inline std::size_t horizon_index(double seconds, double dt, std::size_t available) {
  const long idx = std::lround(seconds / dt) - 1;
  if (idx < 0 || static_cast<std::size_t>(idx) >= available) {
    throw UsageError(detail::concat("horizon ", seconds, " s needs waypoint ", idx + 1,
                                    " at dt ", dt, " but only ", available, " are available"));
  }
  return static_cast<std::size_t>(idx);
}

struct HorizonMetric {
  std::vector<double> horizons;
  std::vector<double> values;
  double average = 0.0;
};

inline HorizonMetric planning_l2(std::span<const Vec2> pred, std::span<const Vec2> gt, double dt,
                                 const std::vector<double>& horizons = default_horizons()) {
  HorizonMetric m;
  m.horizons = horizons;
  for (double h : horizons) {
    const auto i = horizon_index(h, dt, std::min(pred.size(), gt.size()));
    m.values.push_back((pred[i] - gt[i]).norm());
  }
  for (double v : m.values) m.average += v / static_cast<double>(m.values.size());
  return m;
}

struct EgoBox {
  double length = 4.08;
  double width = 1.85;
};

/// Voxels of every column whose (x, y) center lies inside the ego rectangle
/// centered at `center` with heading `heading` (radians from +x).
inline std::vector<std::size_t> footprint_voxels(const GridGeometry& g, const Vec2& center,
                                                 double heading, const EgoBox& box = {}) {
  const double c = std::cos(heading), s = std::sin(heading);
  const double hl = 0.5 * box.length, hw = 0.5 * box.width, r = std::hypot(hl, hw);
  const double res = g.resolution();
  const int nx = static_cast<int>(g.dims().x), ny = static_cast<int>(g.dims().y);
  auto range = [&](double lo, double hi, double origin, int n) {
    const int a = std::max(0, static_cast<int>(std::floor((lo - origin) / res - 0.5)));
    const int b = std::min(n - 1, static_cast<int>(std::ceil((hi - origin) / res - 0.5)));
    return std::make_pair(a, b);
  };
  const auto [i0, i1] = range(center.x() - r, center.x() + r, g.origin().x(), nx);
  const auto [j0, j1] = range(center.y() - r, center.y() + r, g.origin().y(), ny);
  std::vector<std::size_t> out;
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) {
      const Vec3 p = g.voxel_center(VoxelIndex{i, j, 0});
      const double dx = p.x() - center.x(), dy = p.y() - center.y();
      const double along = c * dx + s * dy, across = -s * dx + c * dy;
      if (std::abs(along) > hl || std::abs(across) > hw) continue;
      for (int k = 0; k < static_cast<int>(g.dims().z); ++k) {
        out.push_back(g.linear_index({i, j, k}));
      }
    }
  }
  return out;
}

/// Headings along a waypoint sequence starting at the ego origin; a repeated
/// point keeps the previous heading.
inline std::vector<double> waypoint_headings(std::span<const Vec2> wp) {
  std::vector<double> h;
  Vec2 prev = Vec2::Zero();
  double last = 0.0;
  for (const auto& p : wp) {
    const Vec2 d = p - prev;
    if (d.norm() > 1e-9) last = std::atan2(d.y(), d.x());
    h.push_back(last);
    prev = p;
  }
  return h;
}

/// One planning sample: predicted waypoints in the current ego frame, the
/// ground-truth grid of each future frame, and optionally the pose mapping
/// current ego coordinates into each future frame's ego coordinates.
struct CollisionSample {
  std::vector<Vec2> waypoints;
  std::vector<const SemanticGrid*> future_grids;
  std::vector<Pose> to_future;  // empty means identity
};

inline bool collides(const SemanticGrid& grid, const Vec2& center, double heading,
                     const std::vector<int>& dynamic, const EgoBox& box = {}) {
  for (auto v : footprint_voxels(grid.geometry(), center, heading, box)) {
    const int cat = grid.at(v);
    if (std::find(dynamic.begin(), dynamic.end(), cat) != dynamic.end()) return true;
  }
  return false;
}

class CollisionAccumulator {
 public:
  CollisionAccumulator(double dt, std::vector<int> dynamic, EgoBox box = {},
                       std::vector<double> horizons = default_horizons())
      : dt_(dt), dynamic_(std::move(dynamic)), box_(box), horizons_(std::move(horizons)),
        hits_(horizons_.size(), 0) {}

  void add(const CollisionSample& s) {
    const auto heading = waypoint_headings(s.waypoints);
    for (std::size_t h = 0; h < horizons_.size(); ++h) {
      const auto i = horizon_index(horizons_[h], dt_, s.waypoints.size());
      if (i >= s.future_grids.size() || !s.future_grids[i]) {
        throw DataError(detail::concat("collision check needs the ground-truth grid ", i + 1,
                                       " frames ahead"));
      }
      Vec2 c = s.waypoints[i];
      double yaw = heading[i];
      if (i < s.to_future.size()) {
        const Pose& p = s.to_future[i];
        const Vec3 q = transform_point(p, Vec3(c.x(), c.y(), 0.0));
        const Vec3 f = transform_vector(p, Vec3(std::cos(yaw), std::sin(yaw), 0.0));
        c = Vec2(q.x(), q.y());
        yaw = std::atan2(f.y(), f.x());
      }
      hits_[h] += collides(*s.future_grids[i], c, yaw, dynamic_, box_);
    }
    ++samples_;
  }

  HorizonMetric report() const {
    HorizonMetric m;
    m.horizons = horizons_;
    for (auto k : hits_) {
      m.values.push_back(samples_ ? static_cast<double>(k) / static_cast<double>(samples_) : 0.0);
    }
    for (double v : m.values) m.average += v / static_cast<double>(m.values.size());
    return m;
  }

  std::size_t samples() const { return samples_; }

 private:
  double dt_;
  std::vector<int> dynamic_;
  EgoBox box_;
  std::vector<double> horizons_;
  std::vector<std::uint64_t> hits_;
  std::size_t samples_ = 0;
};

inline HorizonMetric collision_rate(std::span<const CollisionSample> samples, double dt,
                                    const std::vector<int>& dynamic, const EgoBox& box = {},
                                    const std::vector<double>& horizons = default_horizons()) {
  CollisionAccumulator acc(dt, dynamic, box, horizons);
  for (const auto& s : samples) acc.add(s);
  return acc.report();
}

// ------------------------------------------------------------ baselines

inline std::vector<SemanticGrid> copy_paste_baseline(const SemanticGrid& current, int horizon) {
  if (horizon < 1) throw UsageError(detail::concat("copy-paste horizon must be >= 1, got ", horizon));
  return std::vector<SemanticGrid>(static_cast<std::size_t>(horizon), current);
}

}  // namespace occworld::metrics
