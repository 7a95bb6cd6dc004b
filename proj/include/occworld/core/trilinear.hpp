// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

#include "occworld/core/geometry.hpp"

namespace occworld {

struct Tap {
  std::uint32_t voxel = 0;
  double weight = 0.0;
};

/// Corner taps for trilinear interpolation with nodes at voxel centers.
/// Corners outside the lattice are dropped (zero padding), and points outside
/// the grid volume get no taps at all.
struct TrilinearTaps {
  std::array<Tap, 8> taps{};
  int count = 0;
};

inline TrilinearTaps trilinear_taps(const GridGeometry& g, const Vec3& p) {
  TrilinearTaps out;
  if (!g.world_to_voxel(p)) return out;
  const Vec3 c = (p - g.origin()) / g.resolution() - Vec3::Constant(0.5);
  const int i0 = static_cast<int>(std::floor(c.x()));
  const int j0 = static_cast<int>(std::floor(c.y()));
  const int k0 = static_cast<int>(std::floor(c.z()));
  const double fx = c.x() - i0;
  const double fy = c.y() - j0;
  const double fz = c.z() - k0;
  for (int dk = 0; dk < 2; ++dk) {
    const double wz = dk ? fz : 1.0 - fz;
    for (int dj = 0; dj < 2; ++dj) {
      const double wy = dj ? fy : 1.0 - fy;
      for (int di = 0; di < 2; ++di) {
        const double w = (di ? fx : 1.0 - fx) * wy * wz;
        const VoxelIndex v{i0 + di, j0 + dj, k0 + dk};
        if (w == 0.0 || !g.contains(v)) continue;
        out.taps[out.count++] = {static_cast<std::uint32_t>(g.linear_index(v)), w};
      }
    }
  }
  return out;
}

}  // namespace occworld
