// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-view unprojection encoder: a shared per-pixel MLP over
// [RGB, pixel positional encoding], bilinear sampling at the projection of
// every voxel center, averaging over the cameras that see the voxel, and a
// per-voxel MLP over [average, voxel positional encoding].

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "occworld/core/camera.hpp"
#include "occworld/nets/feature_grid.hpp"
#include "occworld/nets/mlp.hpp"
#include "occworld/scene/scene.hpp"

namespace occworld::nets {

/// One camera image, RGB in [0, 1], interleaved row-major.
struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> rgb;

  static RgbImage from_labels(const scene::CameraLabels& l) {
    if (!l.has_rgb()) throw DataError("camera labels carry no RGB image");
    RgbImage im{l.width, l.height, {}};
    im.rgb.reserve(l.rgb.size());
    for (auto c : l.rgb) im.rgb.push_back(static_cast<float>(c) / 255.0f);
    return im;
  }
};

struct EncoderConfig {
  std::size_t pixel_hidden = 32;
  std::size_t pixel_features = 16;
  std::size_t voxel_hidden = 64;
  std::size_t feature_dim = 32;
  int pe_freqs = 8;
  Activation activation = Activation::relu;
};

/// Row i of the map averages bilinear taps into the stacked per-pixel
/// features of all cameras for voxel i; voxels no camera sees get an empty
/// row. `visible[i]` counts the cameras that see voxel i.
struct ProjectionMap {
  std::shared_ptr<const ad::SparseRows> rows;
  std::vector<std::uint8_t> visible;
  std::size_t pixel_count = 0;
};

inline ProjectionMap make_projection_map(const GridGeometry& g,
                                         std::span<const CameraModel> cameras) {
  if (cameras.empty()) throw UsageError("encoder needs at least one camera");
  std::vector<std::size_t> offset;
  std::size_t total = 0;
  for (const auto& c : cameras) {
    offset.push_back(total);
    total += static_cast<std::size_t>(c.width()) * c.height();
  }
  auto map = std::make_shared<ad::SparseRows>();
  map->input_rows = total;
  ProjectionMap out;
  out.visible.assign(g.voxel_count(), 0);
  struct Hit {
    std::size_t cam;
    double u, v;
  };
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const Vec3 p = g.voxel_center(g.unravel(i));
    hits.clear();
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      if (auto pr = cameras[c].project(p)) hits.push_back({c, pr->pixel.u, pr->pixel.v});
    }
    out.visible[i] = static_cast<std::uint8_t>(hits.size());
    const double share = hits.empty() ? 0.0 : 1.0 / static_cast<double>(hits.size());
    for (const auto& h : hits) {
      const auto& cam = cameras[h.cam];
      const int w = static_cast<int>(cam.width()), ht = static_cast<int>(cam.height());
      // Pixel centers sit at half-integers; clamp to the outermost centers.
      const double x = std::clamp(h.u - 0.5, 0.0, w - 1.0);
      const double y = std::clamp(h.v - 0.5, 0.0, ht - 1.0);
      const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, ht - 1);
      const double fx = x - x0, fy = y - y0;
      const std::pair<int, int> px[4] = {{x0, y0}, {x1, y0}, {x0, y1}, {x1, y1}};
      const double wt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      for (int t = 0; t < 4; ++t) {
        if (wt[t] == 0.0) continue;
        map->add(static_cast<std::uint32_t>(offset[h.cam] +
                                            static_cast<std::size_t>(px[t].second) * w +
                                            px[t].first),
                 share * wt[t]);
      }
    }
    map->finish_row();
  }
  out.rows = map;
  out.pixel_count = total;
  return out;
}

/// Per-pixel encoder input [sum of pixels, 3 + 4 * freqs]: RGB followed by
/// the encoding of the pixel center in [-1, 1]^2.
template <typename T>
ad::Tensor<T> pixel_inputs(std::span<const RgbImage> images,
                           std::span<const CameraModel> cameras, int freqs) {
  if (images.size() != cameras.size()) {
    throw UsageError(detail::concat("encoder got ", images.size(), " images for ",
                                    cameras.size(), " cameras"));
  }
  const std::size_t width = 3 + positional_encoding_size(2, freqs);
  std::vector<T> out;
  std::vector<double> pe;
  std::size_t rows = 0;
  for (std::size_t c = 0; c < images.size(); ++c) {
    const auto& im = images[c];
    if (im.width != cameras[c].width() || im.height != cameras[c].height() ||
        im.rgb.size() != static_cast<std::size_t>(im.width) * im.height * 3) {
      throw UsageError(detail::concat("image ", c, " is ", im.width, "x", im.height,
                                      " but camera ", c, " expects ", cameras[c].width(), "x",
                                      cameras[c].height()));
    }
    for (std::uint32_t y = 0; y < im.height; ++y) {
      for (std::uint32_t x = 0; x < im.width; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * im.width + x;
        for (int k = 0; k < 3; ++k) out.push_back(static_cast<T>(im.rgb[3 * p + k]));
        const double uv[2] = {2.0 * (x + 0.5) / im.width - 1.0,
                              2.0 * (y + 0.5) / im.height - 1.0};
        pe.clear();
        append_positional_encoding(pe, uv, freqs);
        for (double v : pe) out.push_back(static_cast<T>(v));
        ++rows;
      }
    }
  }
  return ad::Tensor<T>::constant({rows, width}, std::move(out));
}

template <typename T>
class SceneEncoder {
 public:
  SceneEncoder() = default;

  SceneEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    const auto pix_in = 3 + positional_encoding_size(2, cfg.pe_freqs);
    pixel_mlp_ = Mlp<T>::make({pix_in, cfg.pixel_hidden, cfg.pixel_features}, rng,
                              cfg.activation, cfg.activation);
    voxel_mlp_ = Mlp<T>::make(
        {cfg.pixel_features + positional_encoding_size(3, cfg.pe_freqs), cfg.voxel_hidden,
         cfg.feature_dim},
        rng, cfg.activation);
  }

  const EncoderConfig& config() const { return cfg_; }
  const Mlp<T>& pixel_mlp() const { return pixel_mlp_; }
  const Mlp<T>& voxel_mlp() const { return voxel_mlp_; }

  /// Per-voxel MLP input for given averaged pixel features.
  Tensor<T> voxel_input(const Tensor<T>& averaged, const GridGeometry& g) const {
    return ad::concat_cols<T>({averaged, voxel_positional_encoding<T>(g, cfg_.pe_freqs)});
  }

  FeatureGrid<T> encode(std::span<const RgbImage> images, std::span<const CameraModel> cameras,
                        const GridGeometry& g) const {
    return encode(images, cameras, g, make_projection_map(g, cameras));
  }

  /// Variant reusing a precomputed projection map for a fixed rig.
  FeatureGrid<T> encode(std::span<const RgbImage> images, std::span<const CameraModel> cameras,
                        const GridGeometry& g, const ProjectionMap& map) const {
    if (cameras.empty()) throw UsageError("encoder needs at least one camera");
    const auto pix = pixel_mlp_.forward(pixel_inputs<T>(images, cameras, cfg_.pe_freqs));
    const auto avg = ad::sparse_rows(map.rows, pix);
    return {g, voxel_mlp_.forward(voxel_input(avg, g))};
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    pixel_mlp_.collect(set, prefix + ".pixel");
    voxel_mlp_.collect(set, prefix + ".voxel");
  }

 private:
  EncoderConfig cfg_{};
  Mlp<T> pixel_mlp_;
  Mlp<T> voxel_mlp_;
};

}  // namespace occworld::nets
