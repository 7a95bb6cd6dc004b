// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "occworld/core/geometry.hpp"

namespace occworld {

/// Geometry equality up to float32 storage rounding.
inline bool approx_same_geometry(const GridGeometry& a, const GridGeometry& b,
                                 double rel_tol = 1e-6) {
  if (!(a.dims() == b.dims())) return false;
  auto close = [rel_tol](double x, double y) {
    return std::abs(x - y) <= rel_tol * std::max({1.0, std::abs(x), std::abs(y)});
  };
  return close(a.resolution(), b.resolution()) &&
         close(a.origin().x(), b.origin().x()) &&
         close(a.origin().y(), b.origin().y()) &&
         close(a.origin().z(), b.origin().z());
}

/// One category ID per voxel; the last ID (num_categories - 1) is "free".
class SemanticGrid {
 public:
  SemanticGrid() = default;

  SemanticGrid(GridGeometry geometry, int num_categories)
      : geometry_(std::move(geometry)), num_categories_(num_categories) {
    if (num_categories < 2 || num_categories > 255) {
      throw UsageError(detail::concat(
          "number of categories must lie in [2, 255], got ", num_categories));
    }
    categories_.assign(geometry_.voxel_count(),
                       static_cast<std::uint8_t>(free_category()));
  }

  SemanticGrid(GridGeometry geometry, int num_categories,
               std::vector<std::uint8_t> categories)
      : SemanticGrid(std::move(geometry), num_categories) {
    if (categories.size() != geometry_.voxel_count()) {
      throw DataError(detail::concat("semantic grid expects ",
                                     geometry_.voxel_count(), " voxels, got ",
                                     categories.size()));
    }
    for (auto c : categories) {
      if (c >= num_categories) {
        throw DataError(detail::concat("category ", int(c),
                                       " out of range for ", num_categories,
                                       " categories"));
      }
    }
    categories_ = std::move(categories);
  }

  const GridGeometry& geometry() const { return geometry_; }
  int num_categories() const { return num_categories_; }
  int free_category() const { return num_categories_ - 1; }
  std::size_t size() const { return categories_.size(); }

  std::uint8_t at(std::size_t linear) const { return categories_[linear]; }
  std::uint8_t at(const VoxelIndex& v) const {
    return categories_[geometry_.linear_index(v)];
  }
  void set(std::size_t linear, int category) {
    categories_[linear] = static_cast<std::uint8_t>(category);
  }
  void set(const VoxelIndex& v, int category) {
    set(geometry_.linear_index(v), category);
  }
  bool occupied(std::size_t linear) const {
    return categories_[linear] != free_category();
  }

  const std::vector<std::uint8_t>& categories() const { return categories_; }

  std::size_t occupied_count() const {
    return static_cast<std::size_t>(std::count_if(
        categories_.begin(), categories_.end(),
        [f = free_category()](std::uint8_t c) { return c != f; }));
  }

  friend bool operator==(const SemanticGrid& a, const SemanticGrid& b) {
    return approx_same_geometry(a.geometry_, b.geometry_) &&
           a.num_categories_ == b.num_categories_ &&
           a.categories_ == b.categories_;
  }

 private:
  GridGeometry geometry_{};
  int num_categories_ = 2;
  std::vector<std::uint8_t> categories_;
};

/// Scalar float payload per voxel.
struct DensityGrid {
  GridGeometry geometry;
  std::vector<float> values;
};

}  // namespace occworld
