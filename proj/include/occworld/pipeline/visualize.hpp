// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "occworld/core/grids.hpp"
#include "occworld/render/renderer.hpp"
#include "occworld/scene/scene.hpp"

namespace occworld::pipeline {

/// 8-bit RGB raster.
struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::uint32_t w, std::uint32_t h) : width(w), height(h), rgb(3ull * w * h, 0) {}

  void set(std::uint32_t x, std::uint32_t y, const std::array<float, 3>& c) {
    const auto i = 3 * (static_cast<std::size_t>(y) * width + x);
    for (int k = 0; k < 3; ++k) {
      rgb[i + k] = static_cast<std::uint8_t>(std::lround(std::clamp(c[k], 0.0f, 1.0f) * 255.0f));
    }
  }
};

/// Binary PPM (P6).
inline void write_ppm(const std::filesystem::path& path, const Image& im) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P6\n" << im.width << ' ' << im.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(im.rgb.data()),
           static_cast<std::streamsize>(im.rgb.size()));
}

/// Top-down view: each column shows the albedo of its highest occupied
/// voxel, x to the right and y up.
inline Image birds_eye(const SemanticGrid& grid, const scene::Taxonomy& tax) {
  const auto& d = grid.geometry().dims();
  Image im(d.x, d.y);
  for (std::uint32_t i = 0; i < d.x; ++i) {
    for (std::uint32_t j = 0; j < d.y; ++j) {
      for (int k = static_cast<int>(d.z) - 1; k >= 0; --k) {
        const int c = grid.at(VoxelIndex{static_cast<int>(i), static_cast<int>(j), k});
        if (c == grid.free_category()) continue;
        im.set(i, d.y - 1 - j, tax.albedo.at(static_cast<std::size_t>(c)));
        break;
      }
    }
  }
  return im;
}

/// Rendered camera images: color, depth (white near, black far) and
/// semantic argmax colored by albedo.
struct CameraRender {
  Image color, depth, semantic;
};

template <typename T>
CameraRender camera_images(const std::vector<render::RenderedPixel<T>>& px,
                           const std::vector<render::Ray>& rays, std::uint32_t width,
                           std::uint32_t height, std::uint32_t stride,
                           const scene::Taxonomy& tax, double max_depth) {
  const std::uint32_t w = (width + stride - 1) / stride, h = (height + stride - 1) / stride;
  CameraRender out{Image(w, h), Image(w, h), Image(w, h)};
  for (std::size_t r = 0; r < px.size(); ++r) {
    const auto x = rays[r].source.px / stride, y = rays[r].source.py / stride;
    const auto& p = px[r];
    out.color.set(x, y, {static_cast<float>(p.color[0]), static_cast<float>(p.color[1]),
                         static_cast<float>(p.color[2])});
    const float g = static_cast<float>(
        std::clamp(1.0 - static_cast<double>(p.depth) / max_depth, 0.0, 1.0) * p.opacity);
    out.depth.set(x, y, {g, g, g});
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.semantics.size(); ++k) {
      if (p.semantics[k] > p.semantics[best]) best = k;
    }
    const auto a = tax.albedo.at(best);
    const auto o = static_cast<float>(p.opacity);
    out.semantic.set(x, y, {a[0] * o, a[1] * o, a[2] * o});
  }
  return out;
}

}  // namespace occworld::pipeline
