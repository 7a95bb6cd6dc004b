// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "occworld/core/error.hpp"
#include "occworld/losses/losses.hpp"
#include "occworld/nets/mlp.hpp"

namespace occworld::pipeline {

using Json = nlohmann::json;

enum class Stage { pretrain, finetune, joint };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::finetune: return "finetune";
    case Stage::joint: return "joint";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "finetune") return Stage::finetune;
  if (s == "joint") return Stage::joint;
  throw UsageError("unknown stage '" + s + "' (expected pretrain, finetune or joint)");
}

inline const char* activation_name(nets::Activation a) {
  switch (a) {
    case nets::Activation::identity: return "identity";
    case nets::Activation::relu: return "relu";
    case nets::Activation::softplus: return "softplus";
    case nets::Activation::sigmoid: return "sigmoid";
    case nets::Activation::tanh: return "tanh";
  }
  return "?";
}

inline nets::Activation parse_activation(const std::string& s) {
  for (auto a : {nets::Activation::identity, nets::Activation::relu, nets::Activation::softplus,
                 nets::Activation::sigmoid, nets::Activation::tanh}) {
    if (s == activation_name(a)) return a;
  }
  throw UsageError("unknown activation '" + s + "'");
}

/// Network sizes. Everything here changes the parameter table and therefore
/// the checkpoint fingerprint.
struct ModelConfig {
  std::size_t feature_dim = 32;
  std::size_t pixel_hidden = 32;
  std::size_t pixel_features = 16;
  std::size_t voxel_hidden = 64;
  std::size_t projection_hidden = 64;
  double density_bias = -2.0;
  std::size_t occupancy_hidden = 64;
  std::size_t forecast_hidden = 128;
  int forecast_layers = 2;
  std::size_t state_embedding = 16;
  std::size_t trajectory_hidden = 64;
  int trajectory_horizon = 6;
  int pe_freqs = 8;
  nets::Activation activation = nets::Activation::relu;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  Stage stage = Stage::finetune;
  int past_frames = 2;        // k
  int future_frames = 3;      // f
  int adjacent_frames = 1;    // n
  int samples_per_ray = 48;   // M
  std::uint32_t ray_stride = 4;
  int pretrain_epochs = 0;
  int finetune_epochs = 4;
  double learning_rate = 1e-3;
  losses::LossWeights weights{};
  std::uint64_t seed = 0;
  bool deterministic = true;
  double density_threshold = 1.0;  // tau
  bool ego_state = true;
  bool residual_forecast = true;
  /// Stratified jitter of the render samples during pre-training.
  bool jitter = true;
  /// Scenes held out for evaluation by run_experiment.
  int val_scenes = 2;
  /// Anchor frames are visited every `anchor_stride` frames.
  int anchor_stride = 1;
  /// Cap on optimizer steps per epoch; 0 visits every anchor.
  int max_steps_per_epoch = 0;
  /// Anchor stride used during evaluation.
  int eval_stride = 1;
  ModelConfig model{};

  void validate() const {
    const auto bad = [](const std::string& what) { throw UsageError("config: " + what); };
    if (future_frames < 0) bad(detail::concat("f must be >= 0, got ", future_frames));
    if (past_frames < 0) bad(detail::concat("k must be >= 0, got ", past_frames));
    if (adjacent_frames < 0) bad(detail::concat("n must be >= 0, got ", adjacent_frames));
    if (samples_per_ray < 1) bad(detail::concat("M must be >= 1, got ", samples_per_ray));
    if (ray_stride < 1) bad("ray_stride must be >= 1");
    if (!(density_threshold > 0)) bad(detail::concat("tau must be > 0, got ", density_threshold));
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
    if (pretrain_epochs < 0 || finetune_epochs < 0) bad("epoch counts must be >= 0");
    if (val_scenes < 0) bad("val_scenes must be >= 0");
    if (anchor_stride < 1 || eval_stride < 1) bad("strides must be >= 1");
    if (max_steps_per_epoch < 0) bad("max_steps_per_epoch must be >= 0");
    if (model.feature_dim == 0) bad("feature_dim must be >= 1");
    if (model.forecast_layers < 1) bad("forecast_layers must be >= 1");
    if (model.trajectory_horizon < 1) bad("trajectory_horizon must be >= 1");
    if (model.pe_freqs < 0) bad("pe_freqs must be >= 0");
    weights.validate();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ------------------------------------------------------------------ JSON

inline Json weights_to_json(const losses::LossWeights& w) {
  return {{"depth", w.depth},       {"semantic", w.semantic}, {"rgb", w.rgb},
          {"focal", w.focal},       {"lovasz", w.lovasz},     {"scal_sem", w.scal_sem},
          {"scal_geo", w.scal_geo}, {"trajectory", w.trajectory}};
}

inline Json model_to_json(const ModelConfig& m) {
  return {{"feature_dim", m.feature_dim},
          {"pixel_hidden", m.pixel_hidden},
          {"pixel_features", m.pixel_features},
          {"voxel_hidden", m.voxel_hidden},
          {"projection_hidden", m.projection_hidden},
          {"density_bias", m.density_bias},
          {"occupancy_hidden", m.occupancy_hidden},
          {"forecast_hidden", m.forecast_hidden},
          {"forecast_layers", m.forecast_layers},
          {"state_embedding", m.state_embedding},
          {"trajectory_hidden", m.trajectory_hidden},
          {"trajectory_horizon", m.trajectory_horizon},
          {"pe_freqs", m.pe_freqs},
          {"activation", activation_name(m.activation)}};
}

inline Json config_to_json(const TrainConfig& c) {
  return {{"stage", stage_name(c.stage)},
          {"past_frames", c.past_frames},
          {"future_frames", c.future_frames},
          {"adjacent_frames", c.adjacent_frames},
          {"samples_per_ray", c.samples_per_ray},
          {"ray_stride", c.ray_stride},
          {"pretrain_epochs", c.pretrain_epochs},
          {"finetune_epochs", c.finetune_epochs},
          {"learning_rate", c.learning_rate},
          {"weights", weights_to_json(c.weights)},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"density_threshold", c.density_threshold},
          {"ego_state", c.ego_state},
          {"residual_forecast", c.residual_forecast},
          {"jitter", c.jitter},
          {"val_scenes", c.val_scenes},
          {"anchor_stride", c.anchor_stride},
          {"max_steps_per_epoch", c.max_steps_per_epoch},
          {"eval_stride", c.eval_stride},
          {"model", model_to_json(c.model)}};
}

namespace detail_config {

/// Copies `j[key]` into `out` when present; unknown keys are rejected by the
/// caller so typos do not silently fall back to defaults.
template <typename V>
void maybe(const Json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw UsageError("unknown config key '" + where + k + "'");
  }
}

}  // namespace detail_config

inline losses::LossWeights weights_from_json(const Json& j) {
  using detail_config::maybe;
  detail_config::reject_unknown(
      j, {"depth", "semantic", "rgb", "focal", "lovasz", "scal_sem", "scal_geo", "trajectory"},
      "weights.");
  losses::LossWeights w;
  maybe(j, "depth", w.depth);
  maybe(j, "semantic", w.semantic);
  maybe(j, "rgb", w.rgb);
  maybe(j, "focal", w.focal);
  maybe(j, "lovasz", w.lovasz);
  maybe(j, "scal_sem", w.scal_sem);
  maybe(j, "scal_geo", w.scal_geo);
  maybe(j, "trajectory", w.trajectory);
  return w;
}

inline ModelConfig model_from_json(const Json& j) {
  using detail_config::maybe;
  detail_config::reject_unknown(
      j, {"feature_dim", "pixel_hidden", "pixel_features", "voxel_hidden", "projection_hidden",
          "density_bias", "occupancy_hidden", "forecast_hidden", "forecast_layers",
          "state_embedding", "trajectory_hidden", "trajectory_horizon", "pe_freqs", "activation"},
      "model.");
  ModelConfig m;
  maybe(j, "feature_dim", m.feature_dim);
  maybe(j, "pixel_hidden", m.pixel_hidden);
  maybe(j, "pixel_features", m.pixel_features);
  maybe(j, "voxel_hidden", m.voxel_hidden);
  maybe(j, "projection_hidden", m.projection_hidden);
  maybe(j, "density_bias", m.density_bias);
  maybe(j, "occupancy_hidden", m.occupancy_hidden);
  maybe(j, "forecast_hidden", m.forecast_hidden);
  maybe(j, "forecast_layers", m.forecast_layers);
  maybe(j, "state_embedding", m.state_embedding);
  maybe(j, "trajectory_hidden", m.trajectory_hidden);
  maybe(j, "trajectory_horizon", m.trajectory_horizon);
  maybe(j, "pe_freqs", m.pe_freqs);
  if (j.contains("activation")) m.activation = parse_activation(j.at("activation").get<std::string>());
  return m;
}

/// Missing keys keep their defaults; unknown keys and wrong types are usage
/// errors.
inline TrainConfig config_from_json(const Json& j) {
  using detail_config::maybe;
  detail_config::reject_unknown(
      j, {"stage", "past_frames", "future_frames", "adjacent_frames", "samples_per_ray",
          "ray_stride", "pretrain_epochs", "finetune_epochs", "learning_rate", "weights", "seed",
          "deterministic", "density_threshold", "ego_state", "residual_forecast", "jitter",
          "val_scenes", "anchor_stride", "max_steps_per_epoch", "eval_stride", "model"},
      "");
  TrainConfig c;
  try {
    if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
    maybe(j, "past_frames", c.past_frames);
    maybe(j, "future_frames", c.future_frames);
    maybe(j, "adjacent_frames", c.adjacent_frames);
    maybe(j, "samples_per_ray", c.samples_per_ray);
    maybe(j, "ray_stride", c.ray_stride);
    maybe(j, "pretrain_epochs", c.pretrain_epochs);
    maybe(j, "finetune_epochs", c.finetune_epochs);
    maybe(j, "learning_rate", c.learning_rate);
    if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
    maybe(j, "seed", c.seed);
    maybe(j, "deterministic", c.deterministic);
    maybe(j, "density_threshold", c.density_threshold);
    maybe(j, "ego_state", c.ego_state);
    maybe(j, "residual_forecast", c.residual_forecast);
    maybe(j, "jitter", c.jitter);
    maybe(j, "val_scenes", c.val_scenes);
    maybe(j, "anchor_stride", c.anchor_stride);
    maybe(j, "max_steps_per_epoch", c.max_steps_per_epoch);
    maybe(j, "eval_stride", c.eval_stride);
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
  } catch (const Json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Reads a config file; `//` and `/* */` comments are allowed.
inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(is, nullptr, true, true);
  } catch (const Json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const TrainConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << config_to_json(c).dump(2) << '\n';
}

}  // namespace occworld::pipeline
