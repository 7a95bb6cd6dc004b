// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference implementations used to check the renderer: a
// corner-weight trilinear evaluator and a literal per-sample compositor.

#include <cmath>
#include <vector>

#include "occworld/render/renderer.hpp"

namespace occworld::testing {

/// Trilinear interpolation written from the eight surrounding voxel centers,
/// each contributing prod(1 - |p - center| / res) when inside the lattice.
inline std::vector<double> corner_oracle(const GridGeometry& g, const std::vector<double>& field,
                                         std::size_t width, const Vec3& p) {
  std::vector<double> out(width, 0.0);
  if (!g.world_to_voxel(p)) return out;
  const Vec3 rel = (p - g.origin()) / g.resolution();
  const int bi = static_cast<int>(std::floor(rel.x() - 0.5));
  const int bj = static_cast<int>(std::floor(rel.y() - 0.5));
  const int bk = static_cast<int>(std::floor(rel.z() - 0.5));
  for (int i = bi; i <= bi + 1; ++i) {
    for (int j = bj; j <= bj + 1; ++j) {
      for (int k = bk; k <= bk + 1; ++k) {
        const VoxelIndex v{i, j, k};
        if (!g.contains(v)) continue;
        const Vec3 d = ((p - g.voxel_center(v)) / g.resolution()).cwiseAbs();
        const double w = (1 - d.x()) * (1 - d.y()) * (1 - d.z());
        if (w <= 0) continue;
        const auto l = g.linear_index(v);
        for (std::size_t c = 0; c < width; ++c) out[c] += w * field[l * width + c];
      }
    }
  }
  return out;
}

struct OraclePixel {
  double depth = 0, opacity = 0;
  std::vector<double> semantics;
  std::vector<double> color;
  std::vector<double> weights;
};

/// Direct evaluation of T_m = exp(-sum_{p<m} sigma_p d_p) and
/// w_m = T_m (1 - exp(-sigma_m d_m)) for one ray.
inline OraclePixel composite_oracle(const render::AttributeFields<double>& f,
                                    const render::RaySamples& s) {
  const auto ds = f.semantic_dim();
  OraclePixel px;
  px.semantics.assign(ds, 0.0);
  px.color.assign(3, 0.0);
  std::vector<double> sig(s.size());
  for (std::size_t m = 0; m < s.size(); ++m) {
    sig[m] = corner_oracle(f.geometry, f.density.values(), 1, s.ray.at(s.depths[m]))[0];
  }
  for (std::size_t m = 0; m < s.size(); ++m) {
    double acc = 0;
    for (std::size_t p = 0; p < m; ++p) acc += std::min(sig[p] * s.deltas[p], 80.0);
    const double w = std::exp(-acc) * (1 - std::exp(-std::min(sig[m] * s.deltas[m], 80.0)));
    const Vec3 x = s.ray.at(s.depths[m]);
    const auto sem = corner_oracle(f.geometry, f.semantics.values(), ds, x);
    const auto col = corner_oracle(f.geometry, f.color.values(), 3, x);
    px.weights.push_back(w);
    px.depth += w * s.depths[m];
    px.opacity += w;
    for (std::size_t k = 0; k < ds; ++k) px.semantics[k] += w * sem[k];
    for (std::size_t k = 0; k < 3; ++k) px.color[k] += w * col[k];
  }
  return px;
}

/// Random fields over `g` with densities in [0, dmax].
inline render::AttributeFields<double> random_fields(const GridGeometry& g, std::size_t ds,
                                                     Rng& rng, double dmax = 3.0) {
  const auto v = g.voxel_count();
  std::vector<double> d(v), s(v * ds), c(v * 3);
  for (auto& x : d) x = rng.uniform(0.0, dmax);
  for (auto& x : s) x = rng.uniform(-2.0, 2.0);
  for (auto& x : c) x = rng.uniform(0.0, 1.0);
  return {g, ad::Tensor<double>::parameter({v, 1}, d),
          ad::Tensor<double>::parameter({v, ds}, s), ad::Tensor<double>::parameter({v, 3}, c)};
}

/// Ray through the grid from a random point outside it toward a random
/// interior point.
inline render::Ray random_ray(const GridGeometry& g, Rng& rng) {
  const Vec3 lo = g.origin(), hi = g.max_corner(), mid = 0.5 * (lo + hi);
  const double radius = 0.5 * g.diagonal() + g.resolution();
  const Vec3 dir_out = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  render::Ray r;
  r.origin = mid + radius * dir_out;
  const Vec3 target(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                    rng.uniform(lo.z(), hi.z()));
  r.direction = (target - r.origin).normalized();
  r.t_near = 0.1;
  r.t_far = 2 * radius;
  return r;
}

}  // namespace occworld::testing
