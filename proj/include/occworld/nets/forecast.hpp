// SPDX-License-Identifier: Apache-2.0
#pragma once

// Feature-space forecasting: a per-voxel MLP over
// [voxel feature, ego embedding, voxel positional encoding], optionally
// residual, applied recursively for multi-step rollouts.

#include <optional>
#include <vector>

#include "occworld/core/ego_state.hpp"
#include "occworld/nets/feature_grid.hpp"
#include "occworld/nets/heads.hpp"
#include "occworld/nets/mlp.hpp"

namespace occworld::nets {

struct ForecastConfig {
  std::size_t hidden = 128;
  int hidden_layers = 2;
  bool residual = true;
  bool zero_init = true;
  bool use_ego = true;
  int history = 2;
  /// Width of the learned ego embedding; 0 feeds the raw ego features.
  std::size_t state_embedding = 16;
  int pe_freqs = 8;
  Activation activation = Activation::relu;
};

template <typename T>
class ForecastModule {
 public:
  ForecastModule() = default;

  ForecastModule(std::size_t feature_dim, const ForecastConfig& cfg, Rng& rng)
      : cfg_(cfg), d_(feature_dim) {
    if (cfg.hidden_layers < 1) throw UsageError("forecast MLP needs a hidden layer");
    std::size_t ego_width = 0;
    if (cfg.use_ego) {
      const auto raw = EgoState::feature_size(static_cast<std::size_t>(cfg.history));
      if (cfg.state_embedding > 0) {
        state_mlp_ = Mlp<T>::make({raw, cfg.state_embedding, cfg.state_embedding}, rng,
                                    cfg.activation);
        ego_width = cfg.state_embedding;
      } else {
        ego_width = raw;
      }
    }
    std::vector<std::size_t> widths{feature_dim + ego_width +
                                    positional_encoding_size(3, cfg.pe_freqs)};
    for (int l = 0; l < cfg.hidden_layers; ++l) widths.push_back(cfg.hidden);
    widths.push_back(feature_dim);
    feature_mlp_ = Mlp<T>::make(widths, rng, cfg.activation, Activation::identity,
                                cfg.zero_init);
  }

  const ForecastConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return d_; }
  const Mlp<T>& feature_mlp() const { return feature_mlp_; }
  const std::optional<Mlp<T>>& state_mlp() const { return state_mlp_; }

  /// Embedding row of an ego state; an absent state embeds like the zero
  /// state.
  Tensor<T> ego_embedding(const EgoState* ego) const {
    const auto k = static_cast<std::size_t>(cfg_.history);
    const EgoState zero = EgoState::zero(k);
    const EgoState& e = ego ? *ego : zero;
    if (e.history_length() != k) {
      throw UsageError(detail::concat("forecast module expects ", k,
                                      " history entries, got ", e.history_length()));
    }
    const auto row = ego_row<T>(e);
    return state_mlp_ ? state_mlp_->forward(row) : row;
  }

  FeatureGrid<T> forward(const FeatureGrid<T>& f, const EgoState* ego) const {
    f.validate();
    if (f.dim() != d_) {
      throw ShapeError(detail::concat("forecast module built for D=", d_, ", got D=", f.dim()));
    }
    const auto v = f.geometry.voxel_count();
    std::vector<Tensor<T>> parts{f.features};
    if (cfg_.use_ego) parts.push_back(ad::broadcast_rows(ego_embedding(ego), v));
    parts.push_back(voxel_positional_encoding<T>(f.geometry, cfg_.pe_freqs));
    const auto delta = feature_mlp_.forward(ad::concat_cols<T>(parts));
    return {f.geometry, cfg_.residual ? ad::add(f.features, delta) : delta};
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    feature_mlp_.collect(set, prefix + ".feature");
    if (state_mlp_) state_mlp_->collect(set, prefix + ".state");
  }

 private:
  ForecastConfig cfg_{};
  std::size_t d_ = 0;
  Mlp<T> feature_mlp_;
  std::optional<Mlp<T>> state_mlp_;
};

template <typename T>
FeatureGrid<T> forecast_step(const FeatureGrid<T>& f, const EgoState* ego,
                             const ForecastModule<T>& module) {
  return module.forward(f, ego);
}

/// `horizon` chained forecast steps. `egos` is empty (no ego input) or holds
/// one state per step.
template <typename T>
std::vector<FeatureGrid<T>> rollout(const FeatureGrid<T>& f, std::span<const EgoState> egos,
                                    const ForecastModule<T>& module, int horizon) {
  if (horizon < 1) throw UsageError(detail::concat("rollout horizon must be >= 1, got ", horizon));
  if (!egos.empty() && egos.size() != static_cast<std::size_t>(horizon)) {
    throw UsageError(detail::concat("rollout got ", egos.size(), " ego states for horizon ",
                                    horizon));
  }
  std::vector<FeatureGrid<T>> out;
  out.reserve(static_cast<std::size_t>(horizon));
  const FeatureGrid<T>* cur = &f;
  for (int s = 0; s < horizon; ++s) {
    out.push_back(forecast_step(*cur, egos.empty() ? nullptr : &egos[static_cast<std::size_t>(s)],
                                module));
    cur = &out.back();
  }
  return out;
}

}  // namespace occworld::nets
