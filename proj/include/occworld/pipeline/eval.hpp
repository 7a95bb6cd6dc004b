// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "occworld/metrics/metrics.hpp"
#include "occworld/metrics/raycast.hpp"
#include "occworld/pipeline/train.hpp"

namespace occworld::pipeline {

/// Self-supervised occupancy: a voxel takes the argmax of its semantic
/// logits (ties to the lower index) when its density reaches `tau`, and is
/// free otherwise.
template <typename T>
SemanticGrid extract_occupancy_selfsup(const render::AttributeFields<T>& fields, double tau,
                                       int num_categories) {
  fields.validate();
  if (!(tau > 0)) throw UsageError(detail::concat("density threshold must be > 0, got ", tau));
  const auto ds = fields.semantic_dim();
  if (ds == 0 || ds > static_cast<std::size_t>(num_categories - 1)) {
    throw ShapeError(detail::concat("selfsup extraction: ", ds, " semantic channels for ",
                                    num_categories, " categories"));
  }
  SemanticGrid grid(fields.geometry, num_categories);
  const auto& sigma = fields.density.values();
  const auto& s = fields.semantics.values();
  for (std::size_t v = 0; v < grid.size(); ++v) {
    if (!(static_cast<double>(sigma[v]) >= tau)) continue;
    std::size_t best = 0;
    for (std::size_t k = 1; k < ds; ++k) {
      if (s[v * ds + k] > s[v * ds + best]) best = k;
    }
    grid.set(v, static_cast<int>(best));
  }
  return grid;
}

struct EvalOptions {
  bool selfsup = false;
  double tau = 1.0;
  /// Pixel stride of the camera rays defining the visible-voxel mask.
  std::uint32_t visibility_stride = 1;
  bool ray_iou = true;
  bool planning = true;
};

struct EvalBundle {
  std::string mode = "supervised";
  std::size_t samples = 0;
  /// Index h holds step-horizon h; 0 is the current frame.
  std::vector<metrics::MiouReport> horizons;
  std::vector<metrics::MiouReport> copy_paste;  // h = 0 mirrors the model
  /// Averages over step-horizons 1..f; NaN when f = 0.
  double forecast_miou = std::nan("");
  double copy_paste_miou = std::nan("");
  metrics::MiouReport visible;
  metrics::RayIoUReport ray_iou;
  metrics::MiouReport all_free;
  metrics::MiouReport uniform_random;
  metrics::HorizonMetric l2;
  metrics::HorizonMetric collision;
  std::size_t planning_samples = 0;
  std::size_t collision_samples = 0;
};

namespace detail_eval {

inline double average_miou(const std::vector<metrics::MiouReport>& r) {
  if (r.size() < 2) return std::nan("");
  double s = 0;
  for (std::size_t h = 1; h < r.size(); ++h) s += r[h].miou;
  return s / static_cast<double>(r.size() - 1);
}

/// Largest horizon list (from the default 1/2/3 s) reachable with `n`
/// waypoints at interval `dt`.
inline std::vector<double> reachable_horizons(double dt, std::size_t n) {
  std::vector<double> out;
  for (double h : metrics::default_horizons()) {
    const long idx = std::lround(h / dt) - 1;
    if (idx >= 0 && static_cast<std::size_t>(idx) < n) out.push_back(h);
  }
  return out;
}

inline SemanticGrid uniform_random_grid(const GridGeometry& g, int num_categories, Rng& rng) {
  SemanticGrid grid(g, num_categories);
  for (std::size_t v = 0; v < grid.size(); ++v) grid.set(v, rng.uniform_int(0, num_categories - 1));
  return grid;
}

}  // namespace detail_eval

/// Predicted grids for frames T..T+f.
template <typename T>
std::vector<SemanticGrid> predict_sequence(const Model<T>& m, const SceneData& d, int anchor,
                                           int horizon, const EvalOptions& opt,
                                           std::vector<nets::FeatureGrid<T>>* features = nullptr) {
  auto feats = unroll(m, d, anchor, horizon);
  std::vector<SemanticGrid> out;
  for (const auto& f : feats) {
    out.push_back(opt.selfsup
                      ? extract_occupancy_selfsup(m.projection()(f), opt.tau, m.num_categories())
                      : nets::predict(m.occupancy()(f), f.geometry));
  }
  if (features) *features = std::move(feats);
  return out;
}

/// Evaluates every anchor (every `eval_stride` frames) of every scene at
/// step-horizons 0..f against the ground-truth grids, alongside the
/// Copy&Paste, all-free and uniform-random baselines, current-frame RayIoU,
/// visible-voxel mIoU and planning L2 / collision rate.
template <typename T>
EvalBundle evaluate(const Model<T>& m, const std::vector<SceneData>& scenes,
                    const TrainConfig& cfg, const EvalOptions& opt = {}) {
  const int f = cfg.future_frames;
  const int c = m.num_categories();
  const auto hcount = static_cast<std::size_t>(f) + 1;
  std::vector<metrics::ConfusionCounts> model(hcount, metrics::ConfusionCounts(c)),
      paste(hcount, metrics::ConfusionCounts(c));
  metrics::ConfusionCounts visible(c), free_counts(c), random_counts(c);
  metrics::RayIoUAccumulator rays(c);
  const auto query = metrics::query_rays();
  Rng rng(Rng::mix(cfg.seed ^ 0xBA5E11E5ULL));

  EvalBundle b;
  b.mode = opt.selfsup ? "selfsup" : "supervised";
  std::vector<double> l2_sum;
  std::vector<double> l2_horizons;
  std::unique_ptr<metrics::CollisionAccumulator> collisions;

  for (const auto& d : scenes) {
    check_scene(d, cfg, c);
    const auto& s = d.scene;
    const auto traj_h = static_cast<std::size_t>(m.trajectory().config().horizon);
    if (opt.planning && l2_horizons.empty()) {
      l2_horizons = detail_eval::reachable_horizons(s.spec.dt, traj_h);
      l2_sum.assign(l2_horizons.size(), 0.0);
      if (!l2_horizons.empty()) {
        collisions = std::make_unique<metrics::CollisionAccumulator>(
            s.spec.dt, s.taxonomy.dynamic_categories, metrics::EgoBox{}, l2_horizons);
      }
    }
    for (int t : anchor_frames(s, cfg, cfg.eval_stride)) {
      std::vector<nets::FeatureGrid<T>> feats;
      const auto pred = predict_sequence(m, d, t, f, opt, &feats);
      for (std::size_t h = 0; h < hcount; ++h) {
        const auto& gt = s.grid(t + static_cast<int>(h));
        model[h].add(pred[h], gt);
        paste[h].add(pred[0], gt);
      }
      const auto& gt0 = s.grid(t);
      visible.add(pred[0], gt0, metrics::visibility_mask(gt0, s.rig, opt.visibility_stride));
      free_counts.add(SemanticGrid(gt0.geometry(), c), gt0);
      random_counts.add(detail_eval::uniform_random_grid(gt0.geometry(), c, rng), gt0);
      if (opt.ray_iou) rays.add(pred[0], gt0, query);

      const auto& frame = s.frames[static_cast<std::size_t>(t)];
      if (!l2_horizons.empty() && frame.trajectory.size() >= traj_h) {
        const auto wp = nets::TrajectoryHead<T>::waypoints(m.trajectory()(feats.front(), frame.ego));
        const auto l2 = metrics::planning_l2(wp, frame.trajectory, s.spec.dt, l2_horizons);
        for (std::size_t i = 0; i < l2_sum.size(); ++i) l2_sum[i] += l2.values[i];
        ++b.planning_samples;
        if (t + static_cast<int>(traj_h) < s.frame_count()) {
          metrics::CollisionSample cs;
          cs.waypoints = wp;
          for (std::size_t i = 1; i <= traj_h; ++i) {
            const auto& fut = s.frames[static_cast<std::size_t>(t) + i];
            cs.future_grids.push_back(&s.grid(t + static_cast<int>(i)));
            cs.to_future.push_back(relative_pose(frame.pose, fut.pose));
          }
          collisions->add(cs);
          ++b.collision_samples;
        }
      }
      ++b.samples;
    }
  }
  if (b.samples == 0) throw DataError("evaluation found no anchor frames");
  for (std::size_t h = 0; h < hcount; ++h) {
    b.horizons.push_back(metrics::report(model[h]));
    b.copy_paste.push_back(metrics::report(paste[h]));
  }
  b.forecast_miou = detail_eval::average_miou(b.horizons);
  b.copy_paste_miou = detail_eval::average_miou(b.copy_paste);
  b.visible = metrics::report(visible);
  b.all_free = metrics::report(free_counts);
  b.uniform_random = metrics::report(random_counts);
  if (opt.ray_iou) b.ray_iou = rays.report();
  b.l2.horizons = l2_horizons;
  b.collision.horizons = l2_horizons;
  if (b.planning_samples) {
    for (double v : l2_sum) {
      b.l2.values.push_back(v / static_cast<double>(b.planning_samples));
      b.l2.average += b.l2.values.back() / static_cast<double>(l2_sum.size());
    }
  }
  if (collisions && b.collision_samples) b.collision = collisions->report();
  return b;
}

// ------------------------------------------------------------ reports

namespace detail_eval {

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json miou_json(const metrics::MiouReport& r) {
  Json per = Json::array();
  for (double v : r.per_category) per.push_back(number(v));
  return {{"miou", number(r.miou)}, {"iou", number(r.iou_geo)}, {"per_category", per}};
}

inline Json horizon_json(const metrics::HorizonMetric& m) {
  Json values = Json::array();
  for (double v : m.values) values.push_back(number(v));
  return {{"horizons_s", m.horizons}, {"values", values}, {"average", number(m.average)}};
}

}  // namespace detail_eval

inline Json eval_to_json(const EvalBundle& b) {
  using namespace detail_eval;
  Json hz = Json::array(), cp = Json::array();
  for (std::size_t h = 0; h < b.horizons.size(); ++h) {
    auto j = miou_json(b.horizons[h]);
    j["step"] = h;
    hz.push_back(j);
    auto k = miou_json(b.copy_paste[h]);
    k["step"] = h;
    cp.push_back(k);
  }
  Json ray = {{"thresholds", b.ray_iou.thresholds}, {"mean", number(b.ray_iou.mean)}};
  Json per = Json::array();
  for (double v : b.ray_iou.per_threshold) per.push_back(number(v));
  ray["per_threshold"] = per;
  return {{"mode", b.mode},
          {"samples", b.samples},
          {"horizons", hz},
          {"copy_paste", cp},
          {"forecast_miou", number(b.forecast_miou)},
          {"copy_paste_miou", number(b.copy_paste_miou)},
          {"visible", miou_json(b.visible)},
          {"ray_iou", ray},
          {"baselines", {{"all_free", miou_json(b.all_free)},
                         {"uniform_random", miou_json(b.uniform_random)}}},
          {"planning", {{"samples", b.planning_samples},
                        {"l2_m", horizon_json(b.l2)},
                        {"collision_samples", b.collision_samples},
                        {"collision_rate", horizon_json(b.collision)}}}};
}

/// One row per (metric, horizon) pair: metric,step,value.
inline std::string eval_to_csv(const EvalBundle& b) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,step,value\n";
  for (std::size_t h = 0; h < b.horizons.size(); ++h) {
    os << "miou," << h << ',' << b.horizons[h].miou << '\n';
    os << "iou," << h << ',' << b.horizons[h].iou_geo << '\n';
    os << "copy_paste_miou," << h << ',' << b.copy_paste[h].miou << '\n';
    os << "copy_paste_iou," << h << ',' << b.copy_paste[h].iou_geo << '\n';
  }
  os << "visible_miou,0," << b.visible.miou << '\n';
  os << "ray_iou,0," << b.ray_iou.mean << '\n';
  os << "all_free_miou,0," << b.all_free.miou << '\n';
  os << "uniform_random_miou,0," << b.uniform_random.miou << '\n';
  for (std::size_t i = 0; i < b.l2.values.size(); ++i) {
    os << "l2_" << b.l2.horizons[i] << "s,0," << b.l2.values[i] << '\n';
  }
  for (std::size_t i = 0; i < b.collision.values.size(); ++i) {
    os << "collision_" << b.collision.horizons[i] << "s,0," << b.collision.values[i] << '\n';
  }
  return os.str();
}

inline void write_eval(const EvalBundle& b, const std::filesystem::path& json_path,
                       const std::filesystem::path& csv_path = {}) {
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
  std::ofstream js(json_path);
  if (!js) throw DataError("cannot write " + json_path.string());
  js << eval_to_json(b).dump(2) << '\n';
  if (!csv_path.empty()) {
    std::ofstream cs(csv_path);
    if (!cs) throw DataError("cannot write " + csv_path.string());
    cs << eval_to_csv(b);
  }
}

}  // namespace occworld::pipeline
