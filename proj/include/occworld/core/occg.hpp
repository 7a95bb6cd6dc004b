// SPDX-License-Identifier: Apache-2.0
#pragma once

// OCCG binary grid files:
//   "OCCG" | u16 version (1) | u16 payload kind | [u16 D, kind 2 only]
//   | u32 X | u32 Y | u32 Z | f32 resolution | f32 origin[3] | payload
// Payload is row-major with x fastest; kind 0 stores one u8 category per
// voxel, kind 1 one f32 per voxel, kind 2 D f32 values per voxel.
// Everything is little-endian.

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <vector>

#include "occworld/core/binary_io.hpp"
#include "occworld/core/grids.hpp"

namespace occworld {

enum class PayloadKind : std::uint16_t { category = 0, density = 1, feature = 2 };

inline constexpr std::uint16_t kOccgVersion = 1;

/// Decoded OCCG file contents.
struct OccgGrid {
  GridGeometry geometry;
  PayloadKind kind = PayloadKind::category;
  std::uint16_t feature_dim = 1;
  std::vector<std::uint8_t> categories;  // kind 0
  std::vector<float> values;             // kind 1 and 2
};

inline void write_occg(std::ostream& os, const OccgGrid& g) {
  const auto& d = g.geometry.dims();
  const std::size_t n = g.geometry.voxel_count();
  os.write("OCCG", 4);
  io::write_uint(os, kOccgVersion);
  io::write_uint(os, static_cast<std::uint16_t>(g.kind));
  if (g.kind == PayloadKind::feature) io::write_uint(os, g.feature_dim);
  io::write_uint(os, d.x);
  io::write_uint(os, d.y);
  io::write_uint(os, d.z);
  io::write_f32(os, static_cast<float>(g.geometry.resolution()));
  for (int a = 0; a < 3; ++a) {
    io::write_f32(os, static_cast<float>(g.geometry.origin()[a]));
  }
  switch (g.kind) {
    case PayloadKind::category:
      if (g.categories.size() != n) throw DataError("OCCG: category payload size mismatch");
      io::write_bytes(os, g.categories.data(), n);
      break;
    case PayloadKind::density:
    case PayloadKind::feature: {
      const std::size_t per = g.kind == PayloadKind::feature ? g.feature_dim : 1;
      if (g.values.size() != n * per) throw DataError("OCCG: float payload size mismatch");
      for (float v : g.values) io::write_f32(os, v);
      break;
    }
  }
}

inline OccgGrid read_occg(std::istream& is, const std::string& context) {
  io::Reader r(is, context);
  r.expect_magic("OCCG");
  const auto version = r.read_uint<std::uint16_t>();
  if (version != kOccgVersion) {
    throw DataError(detail::concat(context, ": unsupported OCCG version ",
                                   version, " (expected ", kOccgVersion, ")"));
  }
  const auto kind = r.read_uint<std::uint16_t>();
  if (kind > 2) throw DataError(detail::concat(context, ": unknown payload kind ", kind));
  OccgGrid g;
  g.kind = static_cast<PayloadKind>(kind);
  if (g.kind == PayloadKind::feature) {
    g.feature_dim = r.read_uint<std::uint16_t>();
    if (g.feature_dim == 0) throw DataError(context + ": feature dimension 0");
  }
  GridDims dims;
  dims.x = r.read_uint<std::uint32_t>();
  dims.y = r.read_uint<std::uint32_t>();
  dims.z = r.read_uint<std::uint32_t>();
  const double res = r.read_f32();
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = r.read_f32();
  try {
    g.geometry = GridGeometry(dims, res, origin);
  } catch (const UsageError& e) {
    throw DataError(context + ": " + e.what());
  }
  const std::size_t n = g.geometry.voxel_count();
  if (g.kind == PayloadKind::category) {
    g.categories.resize(n);
    r.read_exact(g.categories.data(), n);
  } else {
    const std::size_t per = g.kind == PayloadKind::feature ? g.feature_dim : 1;
    g.values.resize(n * per);
    for (auto& v : g.values) v = r.read_f32();
  }
  r.expect_end();
  return g;
}

inline void save_occg(const std::filesystem::path& path, const OccgGrid& g) {
  auto os = io::open_output(path);
  write_occg(os, g);
  if (!os) throw DataError("failed writing " + path.string());
}

inline OccgGrid load_occg(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  return read_occg(is, path.string());
}

inline OccgGrid to_occg(const SemanticGrid& grid) {
  return {grid.geometry(), PayloadKind::category, 1, grid.categories(), {}};
}

inline SemanticGrid semantic_from_occg(const OccgGrid& g, int num_categories,
                                       const std::string& context = "OCCG") {
  if (g.kind != PayloadKind::category) {
    throw DataError(context + ": expected a category payload");
  }
  try {
    return SemanticGrid(g.geometry, num_categories, g.categories);
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  }
}

inline void save_semantic_grid(const std::filesystem::path& path,
                               const SemanticGrid& grid) {
  save_occg(path, to_occg(grid));
}

inline SemanticGrid load_semantic_grid(const std::filesystem::path& path,
                                       int num_categories) {
  return semantic_from_occg(load_occg(path), num_categories, path.string());
}

inline std::string occg_bytes(const OccgGrid& g) {
  std::ostringstream os(std::ios::binary);
  write_occg(os, g);
  return os.str();
}

}  // namespace occworld
