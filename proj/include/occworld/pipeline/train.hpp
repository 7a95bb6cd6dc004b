// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "occworld/losses/losses.hpp"
#include "occworld/pipeline/model.hpp"
#include "occworld/render/raygen.hpp"
#include "occworld/render/renderer.hpp"
#include "occworld/scene/io.hpp"

namespace occworld::pipeline {

/// A scene plus the per-rig data the encoder reuses across frames.
struct SceneData {
  std::string name;
  scene::Scene scene;
  nets::ProjectionMap map;
};

inline SceneData prepare_scene(scene::Scene s, std::string name = "scene") {
  SceneData d{std::move(name), std::move(s), {}};
  d.map = nets::make_projection_map(d.scene.geometry(), d.scene.rig);
  return d;
}

/// What each stage may read from disk: pre-training sees images and 2D
/// supervision but no grids, fine-tuning sees images and grids but no 2D
/// supervision.
inline scene::LoadOptions stage_load_options(Stage s) {
  if (s == Stage::pretrain) return {.grids = false, .images = true, .supervision = true};
  return {.grids = true, .images = true, .supervision = false};
}

/// Checks that a scene matches the model's category count and ego history
/// length.
inline void check_scene(const SceneData& d, const TrainConfig& cfg, int num_categories) {
  const auto& s = d.scene;
  if (s.spec.num_categories != num_categories) {
    throw DataError(detail::concat(d.name, ": scene has ", s.spec.num_categories,
                                   " categories, model expects ", num_categories));
  }
  if (s.frames.empty()) throw DataError(d.name + ": scene has no frames");
  const auto k = s.frames.front().ego.history_length();
  if (k != static_cast<std::size_t>(cfg.past_frames)) {
    throw DataError(detail::concat(d.name, ": ego states carry ", k,
                                   " past frames, config asks for k=", cfg.past_frames));
  }
  if (!s.baked()) throw DataError(d.name + ": scene has no camera images (not baked)");
}

/// Anchor frames T with k past frames and f future frames inside the
/// sequence.
inline std::vector<int> anchor_frames(const scene::Scene& s, const TrainConfig& cfg, int stride) {
  std::vector<int> out;
  for (int t = cfg.past_frames; t + cfg.future_frames < s.frame_count(); t += stride) {
    out.push_back(t);
  }
  return out;
}

template <typename T>
nets::FeatureGrid<T> encode_frame(const Model<T>& m, const SceneData& d, int frame) {
  std::vector<nets::RgbImage> images;
  for (int c = 0; c < d.scene.camera_count(); ++c) {
    images.push_back(nets::RgbImage::from_labels(d.scene.camera_labels(frame, c)));
  }
  return m.encoder().encode(images, d.scene.rig, d.scene.geometry(), d.map);
}

/// Ego states conditioning each rollout step: step s consumes the state of
/// its input frame T + s. Empty when the model ignores ego state.
template <typename T>
std::vector<EgoState> rollout_egos(const Model<T>& m, const scene::Scene& s, int anchor,
                                   int steps) {
  std::vector<EgoState> egos;
  if (!m.config().ego_state) return egos;
  for (int i = 0; i < steps; ++i) {
    egos.push_back(s.frames.at(static_cast<std::size_t>(anchor + i)).ego);
  }
  return egos;
}

/// [F_T, F~_{T+1}, ..., F~_{T+f}].
template <typename T>
std::vector<nets::FeatureGrid<T>> unroll(const Model<T>& m, const SceneData& d, int anchor,
                                         int horizon) {
  std::vector<nets::FeatureGrid<T>> out{encode_frame(m, d, anchor)};
  if (horizon > 0) {
    const auto egos = rollout_egos(m, d.scene, anchor, horizon);
    auto future = nets::rollout(out.front(), egos, m.forecast(), horizon);
    for (auto& f : future) out.push_back(std::move(f));
  }
  return out;
}

struct StepResult {
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> components;
};

namespace detail_train {

template <typename T>
void optimize(Model<T>& m, nets::Adam<T>& opt, const ad::Tensor<T>& total, const char* stage) {
  const double v = static_cast<double>(total.item());
  if (!std::isfinite(v)) {
    throw NumericError(detail::concat(stage, " loss is not finite (", v, ")"));
  }
  m.params().zero_grad();
  total.backward();
  opt.step(m.params());
  if (!m.params().all_finite()) {
    throw NumericError(detail::concat(stage, " step produced non-finite parameters"));
  }
}

inline double nan_mean(const std::vector<double>& v) {
  double s = 0;
  int n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  }
  return n ? s / n : std::nan("");
}

}  // namespace detail_train

/// Deterministic mode renders serially; otherwise rays are split across
/// hardware threads.
inline render::RenderOptions render_options(const TrainConfig& cfg) {
  render::RenderOptions o;
  if (!cfg.deterministic) o.threads = std::max(1u, std::thread::hardware_concurrency());
  return o;
}

/// Rendered frames T..T+f for the temporal 2D loss.
template <typename T>
std::vector<losses::RenderedFrame<T>> render_frames(const Model<T>& m, const SceneData& d,
                                                    int anchor, const TrainConfig& cfg,
                                                    std::uint64_t sample_seed) {
  const auto feats = unroll(m, d, anchor, cfg.future_frames);
  std::vector<losses::RenderedFrame<T>> frames;
  for (std::size_t j = 0; j < feats.size(); ++j) {
    const int frame = anchor + static_cast<int>(j);
    const auto fields = m.projection()(feats[j]);
    auto bundle = render::build_supervision_bundle(d.scene, frame, cfg.adjacent_frames,
                                                   cfg.ray_stride);
    auto plan = std::make_shared<const render::RenderPlan>(
        render::make_plan(d.scene.geometry(), bundle.rays, cfg.samples_per_ray, cfg.jitter,
                          Rng::mix(sample_seed + j)));
    frames.push_back({render::volume_render(fields, plan, render_options(cfg)),
                      std::move(bundle.labels)});
  }
  return frames;
}

/// One self-supervised step on anchor frame T: encode, roll out f frames,
/// project attributes, render each frame's supervision rays and apply the
/// temporal 2D loss. The occupancy and trajectory heads stay out of the
/// graph.
template <typename T>
StepResult pretrain_step(Model<T>& m, nets::Adam<T>& opt, const SceneData& d, int anchor,
                         const TrainConfig& cfg, std::uint64_t sample_seed = 0) {
  m.set_stage(Stage::pretrain);
  const auto frames = render_frames(m, d, anchor, cfg, sample_seed);
  const auto loss = losses::temporal_2d_loss(frames, cfg.weights);
  StepResult r;
  r.loss = static_cast<double>(loss.total.item());
  r.components = {{"depth", detail_train::nan_mean(loss.depth)},
                  {"semantic", detail_train::nan_mean(loss.semantic)},
                  {"rgb", detail_train::nan_mean(loss.rgb)}};
  detail_train::optimize(m, opt, loss.total, "pretrain");
  return r;
}

/// One supervised step on anchor frame T: the 3D occupancy loss summed over
/// frames T..T+f, plus the weighted trajectory loss from F_T in joint mode.
/// The projection head is frozen and bypassed.
template <typename T>
StepResult finetune_step(Model<T>& m, nets::Adam<T>& opt, const SceneData& d, int anchor,
                         const TrainConfig& cfg, bool joint = false) {
  m.set_stage(joint ? Stage::joint : Stage::finetune);
  const auto feats = unroll(m, d, anchor, cfg.future_frames);
  auto total = ad::Tensor<T>::scalar(T(0));
  double focal = 0, lovasz = 0, scal_sem = 0, scal_geo = 0;
  for (std::size_t j = 0; j < feats.size(); ++j) {
    const auto& gt = d.scene.grid(anchor + static_cast<int>(j));
    const auto l = losses::occupancy_3d_loss(m.occupancy()(feats[j]), gt.categories(),
                                             cfg.weights);
    total = ad::add(total, l.total);
    focal += l.focal;
    lovasz += l.lovasz;
    scal_sem += l.scal_sem;
    scal_geo += l.scal_geo;
  }
  StepResult r;
  r.components = {{"focal", focal}, {"lovasz", lovasz}, {"scal_sem", scal_sem},
                  {"scal_geo", scal_geo}};
  if (joint && cfg.weights.trajectory > 0) {
    const auto& frame = d.scene.frames.at(static_cast<std::size_t>(anchor));
    const auto h = static_cast<std::size_t>(m.trajectory().config().horizon);
    if (frame.trajectory.size() < h) {
      throw DataError(detail::concat(d.name, ": frame ", anchor, " stores ",
                                     frame.trajectory.size(), " waypoints, the head predicts ", h));
    }
    const std::vector<Vec2> gt(frame.trajectory.begin(), frame.trajectory.begin() + h);
    const auto t = losses::trajectory_l2_loss(m.trajectory()(feats.front(), frame.ego), gt);
    r.components.push_back({"trajectory", static_cast<double>(t.item())});
    total = ad::add(total, ad::scale(t, static_cast<T>(cfg.weights.trajectory)));
  }
  r.loss = static_cast<double>(total.item());
  detail_train::optimize(m, opt, total, joint ? "joint" : "finetune");
  return r;
}

struct StageReport {
  Stage stage = Stage::finetune;
  std::size_t steps = 0;
  std::vector<double> epoch_loss;  // mean step loss per epoch
};

/// Runs `epochs` passes over the anchors of all scenes in a seeded shuffled
/// order. `global_step` numbers loss-log rows across stages.
template <typename T>
StageReport train_stage(Model<T>& m, nets::Adam<T>& opt, const std::vector<SceneData>& scenes,
                        Stage stage, int epochs, const TrainConfig& cfg,
                        losses::LossLog* log = nullptr, std::size_t* global_step = nullptr) {
  std::vector<std::pair<std::size_t, int>> anchors;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    check_scene(scenes[i], cfg, m.num_categories());
    for (int t : anchor_frames(scenes[i].scene, cfg, cfg.anchor_stride)) anchors.push_back({i, t});
  }
  if (anchors.empty() && epochs > 0) {
    throw DataError(detail::concat("no anchor frames: sequences need at least ",
                                   cfg.past_frames + cfg.future_frames + 1, " frames"));
  }
  StageReport rep;
  rep.stage = stage;
  std::size_t local = 0;
  std::size_t& step = global_step ? *global_step : local;
  Rng order(Rng::mix(cfg.seed ^ (0x57A6E000ULL + static_cast<std::uint64_t>(stage))));
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = anchors.size(); i > 1; --i) {
      std::swap(anchors[i - 1], anchors[order.next_u64() % i]);
    }
    std::size_t n = anchors.size();
    if (cfg.max_steps_per_epoch > 0) n = std::min(n, static_cast<std::size_t>(cfg.max_steps_per_epoch));
    double sum = 0;
    for (std::size_t a = 0; a < n; ++a) {
      const auto& [si, t] = anchors[a];
      const StepResult r =
          stage == Stage::pretrain
              ? pretrain_step(m, opt, scenes[si], t, cfg, Rng::mix(cfg.seed + 7919 * step))
              : finetune_step(m, opt, scenes[si], t, cfg, stage == Stage::joint);
      sum += r.loss;
      if (log) {
        log->append(step, stage_name(stage), "total", r.loss);
        for (const auto& [k, v] : r.components) log->append(step, stage_name(stage), k, v);
      }
      ++step;
      ++rep.steps;
    }
    rep.epoch_loss.push_back(n ? sum / static_cast<double>(n) : 0.0);
    if (log) log->flush();
  }
  return rep;
}

inline nets::AdamConfig adam_config(const TrainConfig& cfg) {
  nets::AdamConfig a;
  a.lr = cfg.learning_rate;
  return a;
}

}  // namespace occworld::pipeline
