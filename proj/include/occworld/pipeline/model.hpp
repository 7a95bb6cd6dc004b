// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "occworld/core/rng.hpp"
#include "occworld/nets/checkpoint.hpp"
#include "occworld/nets/encoder.hpp"
#include "occworld/nets/forecast.hpp"
#include "occworld/nets/heads.hpp"
#include "occworld/nets/optim.hpp"
#include "occworld/pipeline/config.hpp"

namespace occworld::pipeline {

/// Scalar type of every trained model; checkpoints store f32, so float
/// parameters round-trip bit-exactly.
using Real = float;

/// Architecture-defining subset of a config: anything that changes the
/// parameter table.
inline Json architecture_json(const TrainConfig& c, int num_categories) {
  return {{"model", model_to_json(c.model)},
          {"num_categories", num_categories},
          {"past_frames", c.past_frames},
          {"ego_state", c.ego_state},
          {"residual_forecast", c.residual_forecast}};
}

inline std::uint64_t architecture_fingerprint(const TrainConfig& c, int num_categories) {
  return nets::fnv1a64(architecture_json(c, num_categories).dump());
}

/// Encoder, attribute projection head, occupancy head, forecast module and
/// trajectory head over one shared parameter table.
template <typename T = Real>
class Model {
 public:
  Model(const TrainConfig& cfg, int num_categories)
      : cfg_(cfg), num_categories_(num_categories) {
    cfg.validate();
    if (num_categories < 2) throw UsageError("model needs at least two categories");
    const auto& m = cfg.model;
    Rng rng(cfg.seed);
    encoder_ = nets::SceneEncoder<T>(
        nets::EncoderConfig{m.pixel_hidden, m.pixel_features, m.voxel_hidden, m.feature_dim,
                            m.pe_freqs, m.activation},
        rng);
    projection_ = nets::ProjectionHead<T>(
        m.feature_dim, static_cast<std::size_t>(num_categories - 1),
        nets::ProjectionConfig{m.projection_hidden, m.density_bias, m.activation}, rng);
    occupancy_ =
        nets::OccupancyHead<T>(m.feature_dim, m.occupancy_hidden, num_categories, rng, m.activation);
    forecast_ = nets::ForecastModule<T>(
        m.feature_dim,
        nets::ForecastConfig{m.forecast_hidden, m.forecast_layers, cfg.residual_forecast, true,
                             cfg.ego_state, cfg.past_frames, m.state_embedding, m.pe_freqs,
                             m.activation},
        rng);
    trajectory_ = nets::TrajectoryHead<T>(
        m.feature_dim,
        nets::TrajectoryConfig{m.trajectory_hidden, m.trajectory_horizon, cfg.past_frames,
                               m.activation},
        rng);
    encoder_.collect(encoder_params_, "encoder");
    projection_.collect(projection_params_, "projection");
    occupancy_.collect(occupancy_params_, "occupancy");
    forecast_.collect(forecast_params_, "forecast");
    trajectory_.collect(trajectory_params_, "trajectory");
    for (auto* set : {&encoder_params_, &projection_params_, &occupancy_params_,
                      &forecast_params_, &trajectory_params_}) {
      for (const auto& e : set->entries()) params_.add(e.name, e.tensor);
    }
  }

  // Parameter tensors are shared handles, so copies would alias weights.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const TrainConfig& config() const { return cfg_; }
  int num_categories() const { return num_categories_; }
  std::uint64_t fingerprint() const { return architecture_fingerprint(cfg_, num_categories_); }

  const nets::SceneEncoder<T>& encoder() const { return encoder_; }
  const nets::ProjectionHead<T>& projection() const { return projection_; }
  const nets::OccupancyHead<T>& occupancy() const { return occupancy_; }
  const nets::ForecastModule<T>& forecast() const { return forecast_; }
  const nets::TrajectoryHead<T>& trajectory() const { return trajectory_; }

  nets::ParameterSet<T>& params() { return params_; }
  const nets::ParameterSet<T>& params() const { return params_; }
  const nets::ParameterSet<T>& encoder_params() const { return encoder_params_; }
  const nets::ParameterSet<T>& projection_params() const { return projection_params_; }
  const nets::ParameterSet<T>& occupancy_params() const { return occupancy_params_; }
  const nets::ParameterSet<T>& forecast_params() const { return forecast_params_; }
  const nets::ParameterSet<T>& trajectory_params() const { return trajectory_params_; }

  /// Marks the modules a stage optimizes as trainable and freezes the rest:
  /// pre-training never touches the occupancy or trajectory heads, and
  /// fine-tuning freezes the projection head.
  void set_stage(Stage s) {
    encoder_params_.set_trainable(true);
    forecast_params_.set_trainable(true);
    projection_params_.set_trainable(s == Stage::pretrain);
    occupancy_params_.set_trainable(s != Stage::pretrain);
    trajectory_params_.set_trainable(s == Stage::joint);
  }

  nets::Checkpoint checkpoint(const nets::Adam<T>* opt = nullptr) const {
    const Json meta = {{"config", config_to_json(cfg_)}, {"num_categories", num_categories_}};
    return nets::capture(params_, opt, fingerprint(), meta.dump());
  }

  /// Loads parameters (and optimizer moments when given) from a checkpoint
  /// of the same architecture.
  void load(const nets::Checkpoint& c, nets::Adam<T>* opt = nullptr) {
    if (c.fingerprint != fingerprint()) {
      throw DataError(detail::concat("checkpoint architecture fingerprint ", c.fingerprint,
                                     " does not match the model (", fingerprint(), ")"));
    }
    nets::restore(params_, opt, c);
  }

 private:
  TrainConfig cfg_;
  int num_categories_ = 0;
  nets::SceneEncoder<T> encoder_;
  nets::ProjectionHead<T> projection_;
  nets::OccupancyHead<T> occupancy_;
  nets::ForecastModule<T> forecast_;
  nets::TrajectoryHead<T> trajectory_;
  nets::ParameterSet<T> params_, encoder_params_, projection_params_, occupancy_params_,
      forecast_params_, trajectory_params_;
};

struct CheckpointMeta {
  TrainConfig config;
  int num_categories = 0;
};

/// Config and category count stored inside a checkpoint.
inline CheckpointMeta checkpoint_meta(const nets::Checkpoint& c) {
  try {
    const auto j = Json::parse(c.config_json);
    return {config_from_json(j.at("config")), j.at("num_categories").get<int>()};
  } catch (const Json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
}

/// Rebuilds a model from a checkpoint file.
inline Model<Real> model_from_checkpoint(const nets::Checkpoint& c) {
  const auto meta = checkpoint_meta(c);
  Model<Real> m(meta.config, meta.num_categories);
  m.load(c);
  return m;
}

inline Model<Real> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(nets::load_checkpoint(path));
}

}  // namespace occworld::pipeline
