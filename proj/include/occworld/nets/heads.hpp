// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-voxel heads: attribute projection (density, semantics, color),
// occupancy logits, and the ego trajectory head.

#include <vector>

#include "occworld/core/ego_state.hpp"
#include "occworld/core/grids.hpp"
#include "occworld/nets/feature_grid.hpp"
#include "occworld/nets/mlp.hpp"
#include "occworld/render/renderer.hpp"

namespace occworld::nets {

struct ProjectionConfig {
  std::size_t hidden = 64;
  /// Initial pre-softplus density offset; negative values start the fields
  /// mostly transparent.
  double density_bias = -2.0;
  Activation activation = Activation::relu;
};

/// Shared trunk with three branches: softplus density, linear semantic
/// logits, sigmoid color.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead() = default;

  ProjectionHead(std::size_t feature_dim, std::size_t semantic_dim, const ProjectionConfig& cfg,
                 Rng& rng)
      : ds_(semantic_dim) {
    if (semantic_dim == 0) throw UsageError("projection head needs semantic channels");
    mlp_ = Mlp<T>::make({feature_dim, cfg.hidden, 1 + semantic_dim + 3}, rng, cfg.activation);
    mlp_.biases().back().mutable_values()[0] = static_cast<T>(cfg.density_bias);
  }

  std::size_t semantic_dim() const { return ds_; }
  const Mlp<T>& mlp() const { return mlp_; }

  render::AttributeFields<T> operator()(const FeatureGrid<T>& f) const {
    f.validate();
    const auto out = mlp_.forward(f.features);
    return {f.geometry, ad::softplus(ad::slice_cols(out, 0, 1)),
            ad::slice_cols(out, 1, ds_), ad::sigmoid(ad::slice_cols(out, 1 + ds_, 3))};
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    mlp_.collect(set, prefix);
  }

 private:
  std::size_t ds_ = 0;
  Mlp<T> mlp_;
};

template <typename T>
class OccupancyHead {
 public:
  OccupancyHead() = default;

  OccupancyHead(std::size_t feature_dim, std::size_t hidden, int num_categories, Rng& rng,
                Activation activation = Activation::relu)
      : c_(num_categories) {
    mlp_ = Mlp<T>::make({feature_dim, hidden, static_cast<std::size_t>(num_categories)}, rng,
                        activation);
  }

  int num_categories() const { return c_; }
  const Mlp<T>& mlp() const { return mlp_; }

  /// Per-voxel logits [V, C].
  Tensor<T> operator()(const FeatureGrid<T>& f) const {
    f.validate();
    return mlp_.forward(f.features);
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    mlp_.collect(set, prefix);
  }

 private:
  int c_ = 0;
  Mlp<T> mlp_;
};

/// Argmax per voxel; ties go to the lower category index.
template <typename T>
SemanticGrid predict(const Tensor<T>& logits, const GridGeometry& g) {
  if (logits.rank() != 2 || logits.dim(0) != g.voxel_count()) {
    throw ShapeError(detail::concat("predict expects [", g.voxel_count(), ", C] logits, got ",
                                    ad::to_string(logits.shape())));
  }
  const auto c = logits.dim(1);
  std::vector<std::uint8_t> cats(g.voxel_count());
  const auto& v = logits.values();
  for (std::size_t i = 0; i < cats.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (v[i * c + k] > v[i * c + best]) best = k;
    }
    cats[i] = static_cast<std::uint8_t>(best);
  }
  return SemanticGrid(g, static_cast<int>(c), std::move(cats));
}

/// Ego features as a [1, 3 + 3k] constant row.
template <typename T>
Tensor<T> ego_row(const EgoState& ego) {
  const auto f = ego.features();
  return Tensor<T>::constant({1, f.size()}, std::vector<T>(f.begin(), f.end()));
}

struct TrajectoryConfig {
  std::size_t hidden = 64;
  int horizon = 3;
  int history = 2;
  Activation activation = Activation::relu;
};

/// [mean-pooled features, ego features] -> cumulative (x, y) waypoints in
/// the current ego frame, one per future frame.
template <typename T>
class TrajectoryHead {
 public:
  TrajectoryHead() = default;

  TrajectoryHead(std::size_t feature_dim, const TrajectoryConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.horizon < 1) throw UsageError("trajectory horizon must be at least 1");
    mlp_ = Mlp<T>::make({feature_dim + EgoState::feature_size(static_cast<std::size_t>(cfg.history)),
                         cfg.hidden, 2 * static_cast<std::size_t>(cfg.horizon)},
                        rng, cfg.activation, Activation::identity, true);
  }

  const TrajectoryConfig& config() const { return cfg_; }
  const Mlp<T>& mlp() const { return mlp_; }

  /// [1, 2 * horizon] as x0, y0, x1, y1, ...
  Tensor<T> operator()(const FeatureGrid<T>& f, const EgoState& ego) const {
    f.validate();
    if (ego.history_length() != static_cast<std::size_t>(cfg_.history)) {
      throw UsageError(detail::concat("trajectory head expects ", cfg_.history,
                                      " history entries, got ", ego.history_length()));
    }
    return mlp_.forward(ad::concat_cols<T>({ad::mean_rows(f.features), ego_row<T>(ego)}));
  }

  static std::vector<Vec2> waypoints(const Tensor<T>& out) {
    std::vector<Vec2> w;
    for (std::size_t i = 0; i + 1 < out.size(); i += 2) w.emplace_back(out[i], out[i + 1]);
    return w;
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    mlp_.collect(set, prefix);
  }

 private:
  TrajectoryConfig cfg_{};
  Mlp<T> mlp_;
};

}  // namespace occworld::nets
