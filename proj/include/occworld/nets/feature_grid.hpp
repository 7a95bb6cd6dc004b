// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "occworld/autodiff/tensor.hpp"
#include "occworld/core/occg.hpp"

namespace occworld::nets {

/// Per-voxel feature vectors [V, D] over a grid.
template <typename T>
struct FeatureGrid {
  GridGeometry geometry;
  ad::Tensor<T> features;

  std::size_t dim() const { return features.dim(1); }

  void validate() const {
    if (features.rank() != 2 || features.dim(0) != geometry.voxel_count()) {
      throw ShapeError(detail::concat("feature grid over ", geometry.voxel_count(),
                                      " voxels has shape ",
                                      ad::to_string(features.shape())));
    }
  }
};

template <typename T>
OccgGrid to_occg(const FeatureGrid<T>& f) {
  f.validate();
  if (f.dim() > 0xFFFF) throw UsageError("feature dimension does not fit OCCG");
  OccgGrid g;
  g.geometry = f.geometry;
  g.kind = PayloadKind::feature;
  g.feature_dim = static_cast<std::uint16_t>(f.dim());
  g.values.assign(f.features.values().begin(), f.features.values().end());
  return g;
}

template <typename T>
FeatureGrid<T> feature_grid_from_occg(const OccgGrid& g, const std::string& context = "OCCG") {
  if (g.kind != PayloadKind::feature) throw DataError(context + ": expected a feature payload");
  std::vector<T> v(g.values.begin(), g.values.end());
  return {g.geometry, ad::Tensor<T>::constant({g.geometry.voxel_count(), g.feature_dim},
                                              std::move(v))};
}

/// sin/cos of 2^k * pi * x for k < freqs, per coordinate:
/// [sin(x0 f0), cos(x0 f0), sin(x0 f1), ...].
inline void append_positional_encoding(std::vector<double>& out, std::span<const double> x,
                                       int freqs) {
  for (double c : x) {
    double f = std::numbers::pi;
    for (int k = 0; k < freqs; ++k, f *= 2) {
      out.push_back(std::sin(f * c));
      out.push_back(std::cos(f * c));
    }
  }
}

inline std::size_t positional_encoding_size(std::size_t coords, int freqs) {
  return coords * 2 * static_cast<std::size_t>(freqs);
}

/// Encoding of every voxel's normalized center, [V, 6 * freqs].
template <typename T>
ad::Tensor<T> voxel_positional_encoding(const GridGeometry& g, int freqs) {
  const std::size_t v = g.voxel_count(), w = positional_encoding_size(3, freqs);
  std::vector<T> out;
  out.reserve(v * w);
  std::vector<double> row;
  for (std::size_t i = 0; i < v; ++i) {
    const Vec3 c = g.normalized_center(g.unravel(i));
    const double xyz[3] = {c.x(), c.y(), c.z()};
    row.clear();
    append_positional_encoding(row, xyz, freqs);
    for (double r : row) out.push_back(static_cast<T>(r));
  }
  return ad::Tensor<T>::constant({v, w}, std::move(out));
}

}  // namespace occworld::nets
