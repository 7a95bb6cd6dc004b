// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "occworld/autodiff/tensor.hpp"
#include "occworld/core/geometry.hpp"
#include "occworld/core/trilinear.hpp"

namespace occworld::ad {

namespace detail_ops {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " +
                     to_string(s));
  }
}

enum class Broadcast { same, scalar, row };

/// Broadcast kind of `b` against `a`: identical shape, a single value, or a
/// row vector repeated over the rows of a rank-2 `a`.
inline Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (numel(b) == 1) return Broadcast::scalar;
  if (a.size() == 2 && numel(b) == a[1] &&
      (b.size() == 1 || (b.size() == 2 && b[0] == 1))) {
    return Broadcast::row;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b) +
                   " onto " + to_string(a));
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, DF df) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [df](Node<T>& n) {
    auto* gx = parent_grad(n, 0);
    if (!gx) return;
    const auto& xv = n.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      (*gx)[i] += n.grad[i] * df(xv[i], n.value[i]);
    }
  });
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f,
                 DA da, DB db) {
  const Broadcast kind = broadcast_kind(a.shape(), b.shape(), name);
  const std::size_t cols = kind == Broadcast::row ? a.shape()[1] : 0;
  auto bidx = [kind, cols](std::size_t i) -> std::size_t {
    switch (kind) {
      case Broadcast::same: return i;
      case Broadcast::scalar: return 0;
      case Broadcast::row: return i % cols;
    }
    return i;
  };
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[bidx(i)]);
  return make_result<T>(name, a.shape(), std::move(out), {a, b},
                        [bidx, da, db](Node<T>& n) {
                          auto* ga = parent_grad(n, 0);
                          auto* gb = parent_grad(n, 1);
                          const auto& av = n.parents[0]->value;
                          const auto& bv = n.parents[1]->value;
                          for (std::size_t i = 0; i < av.size(); ++i) {
                            const std::size_t j = bidx(i);
                            if (ga) (*ga)[i] += n.grad[i] * da(av[i], bv[j]);
                            if (gb) (*gb)[j] += n.grad[i] * db(av[i], bv[j]);
                          }
                        });
}

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail_ops

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail_ops::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail_ops::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail_ops::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail_ops::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y) { return T(1) / y; }, [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail_ops::unary<T>(
      "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail_ops::unary<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "softplus", x, [](T v) { return detail_ops::stable_softplus(v); },
      [](T v, T) { return detail_ops::stable_sigmoid(v); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "sigmoid", x, [](T v) { return detail_ops::stable_sigmoid(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Square root of max(x, 0); the derivative at 0 is taken as 0.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(std::max(v, T(0))); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

/// Absolute value with subgradient 0 at 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail_ops::unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// max(x, lo); no gradient where the clamp is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return detail_ops::unary<T>(
      "clamp_min", x, [lo](T v) { return std::max(v, lo); },
      [lo](T v, T) { return v >= lo ? T(1) : T(0); });
}

// ---------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using namespace detail_ops;
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  const auto n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) +
                     " x " + to_string(b.shape()));
  }
  std::vector<T> out(n * m);
  Map<T>(out.data(), n, m).noalias() =
      MapC<T>(a.values().data(), n, k) * MapC<T>(b.values().data(), k, m);
  return make_result<T>("matmul", Shape{n, m}, std::move(out), {a, b},
                        [n, k, m](Node<T>& node) {
                          MapC<T> g(node.grad.data(), n, m);
                          if (auto* ga = parent_grad(node, 0)) {
                            Map<T>(ga->data(), n, k).noalias() +=
                                g * MapC<T>(node.parents[1]->value.data(), k, m)
                                        .transpose();
                          }
                          if (auto* gb = parent_grad(node, 1)) {
                            Map<T>(gb->data(), k, m).noalias() +=
                                MapC<T>(node.parents[0]->value.data(), n, k)
                                    .transpose() *
                                g;
                          }
                        });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return make_result<T>("sum", Shape{1}, {s}, {x}, [](Node<T>& n) {
    if (auto* gx = parent_grad(n, 0)) {
      for (auto& g : *gx) g += n.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Column sums of a rank-2 tensor: [n, m] -> [1, m].
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  detail_ops::require_rank2(x.shape(), "sum_rows");
  const auto n = x.dim(0), m = x.dim(1);
  std::vector<T> out(m, T(0));
  const auto& xv = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out[c] += xv[r * m + c];
  }
  return make_result<T>("sum_rows", Shape{1, m}, std::move(out), {x},
                        [n, m](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t c = 0; c < m; ++c) {
                              (*gx)[r * m + c] += node.grad[c];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail_ops::require_rank2(x.shape(), "mean_rows");
  if (x.dim(0) == 0) throw ShapeError("mean_rows of an empty tensor");
  return scale(sum_rows(x), T(1) / static_cast<T>(x.dim(0)));
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tensor<T>::check_size(shape, x.size());
  return make_result<T>("reshape", std::move(shape), x.values(), {x},
                        [](Node<T>& n) {
                          if (auto* gx = parent_grad(n, 0)) {
                            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                              (*gx)[i] += n.grad[i];
                            }
                          }
                        });
}

/// Repeats a row vector ([m] or [1, m]) into [rows, m].
template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& x, std::size_t rows) {
  if (!(x.rank() == 1 || (x.rank() == 2 && x.dim(0) == 1))) {
    throw ShapeError("broadcast_rows expects a row vector, got " +
                     to_string(x.shape()));
  }
  const auto m = x.size();
  std::vector<T> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(x.values().begin(), x.values().end(), out.begin() + r * m);
  }
  return make_result<T>("broadcast_rows", Shape{rows, m}, std::move(out), {x},
                        [rows, m](Node<T>& n) {
                          auto* gx = parent_grad(n, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < m; ++c) {
                              (*gx)[c] += n.grad[r * m + c];
                            }
                          }
                        });
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail_ops::require_rank2(p.shape(), "concat_cols");
    if (p.dim(0) != n) {
      throw ShapeError(detail::concat("concat_cols: row counts differ (", n,
                                      " vs ", p.dim(0), ")"));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(n * total);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].values();
    const auto w = widths[pi];
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.begin() + r * w, w, out.begin() + r * total + offset);
    }
    offset += w;
  }
  return make_result<T>(
      "concat_cols", Shape{n, total}, std::move(out), parts,
      [n, total, widths](Node<T>& node) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
          const auto w = widths[pi];
          if (auto* g = parent_grad(node, pi)) {
            for (std::size_t r = 0; r < n; ++r) {
              for (std::size_t c = 0; c < w; ++c) {
                (*g)[r * w + c] += node.grad[r * total + offset + c];
              }
            }
          }
          offset += w;
        }
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  detail_ops::require_rank2(x.shape(), "slice_cols");
  const auto n = x.dim(0), m = x.dim(1);
  if (begin + count > m) {
    throw ShapeError(detail::concat("slice_cols: [", begin, ", ", begin + count,
                                    ") exceeds ", m, " columns"));
  }
  std::vector<T> out(n * count);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(x.values().begin() + r * m + begin, count, out.begin() + r * count);
  }
  return make_result<T>("slice_cols", Shape{n, count}, std::move(out), {x},
                        [n, m, begin, count](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t c = 0; c < count; ++c) {
                              (*gx)[r * m + begin + c] += node.grad[r * count + c];
                            }
                          }
                        });
}

// ---------------------------------------------------------------- softmax

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail_ops::require_rank2(x.shape(), "softmax_rows");
  const auto n = x.dim(0), m = x.dim(1);
  std::vector<T> out(n * m);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xv.data() + r * m;
    const T mx = *std::max_element(row, row + m);
    T z = T(0);
    for (std::size_t c = 0; c < m; ++c) z += (out[r * m + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] /= z;
  }
  return make_result<T>("softmax_rows", Shape{n, m}, std::move(out), {x},
                        [n, m](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < n; ++r) {
                            const T* y = node.value.data() + r * m;
                            const T* g = node.grad.data() + r * m;
                            T dot = T(0);
                            for (std::size_t c = 0; c < m; ++c) dot += g[c] * y[c];
                            for (std::size_t c = 0; c < m; ++c) {
                              (*gx)[r * m + c] += y[c] * (g[c] - dot);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  detail_ops::require_rank2(x.shape(), "log_softmax_rows");
  const auto n = x.dim(0), m = x.dim(1);
  std::vector<T> out(n * m);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xv.data() + r * m;
    const T mx = *std::max_element(row, row + m);
    T z = T(0);
    for (std::size_t c = 0; c < m; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = row[c] - lse;
  }
  return make_result<T>("log_softmax_rows", Shape{n, m}, std::move(out), {x},
                        [n, m](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < n; ++r) {
                            const T* y = node.value.data() + r * m;
                            const T* g = node.grad.data() + r * m;
                            T gs = T(0);
                            for (std::size_t c = 0; c < m; ++c) gs += g[c];
                            for (std::size_t c = 0; c < m; ++c) {
                              (*gx)[r * m + c] += g[c] - std::exp(y[c]) * gs;
                            }
                          }
                        });
}

// ---------------------------------------------------------------- indexing

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::uint32_t> index) {
  detail_ops::require_rank2(x.shape(), "gather_rows");
  const auto n = x.dim(0), m = x.dim(1);
  std::vector<T> out(index.size() * m);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw ShapeError(detail::concat("gather_rows: index ", index[r],
                                      " out of range for ", n, " rows"));
    }
    std::copy_n(x.values().begin() + index[r] * m, m, out.begin() + r * m);
  }
  const Shape shape{index.size(), m};
  return make_result<T>("gather_rows", shape, std::move(out), {x},
                        [m, index = std::move(index)](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < index.size(); ++r) {
                            for (std::size_t c = 0; c < m; ++c) {
                              (*gx)[index[r] * m + c] += node.grad[r * m + c];
                            }
                          }
                        });
}

/// out[index[r]] += x[r] over `rows` output rows.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& x, std::vector<std::uint32_t> index,
                           std::size_t rows) {
  detail_ops::require_rank2(x.shape(), "scatter_add_rows");
  const auto n = x.dim(0), m = x.dim(1);
  if (index.size() != n) {
    throw ShapeError(detail::concat("scatter_add_rows: ", index.size(),
                                    " indices for ", n, " rows"));
  }
  std::vector<T> out(rows * m, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    if (index[r] >= rows) {
      throw ShapeError(detail::concat("scatter_add_rows: index ", index[r],
                                      " out of range for ", rows, " rows"));
    }
    for (std::size_t c = 0; c < m; ++c) out[index[r] * m + c] += x.values()[r * m + c];
  }
  return make_result<T>("scatter_add_rows", Shape{rows, m}, std::move(out), {x},
                        [m, index = std::move(index)](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < index.size(); ++r) {
                            for (std::size_t c = 0; c < m; ++c) {
                              (*gx)[r * m + c] += node.grad[index[r] * m + c];
                            }
                          }
                        });
}

/// Fixed sparse linear map in CSR form: output row r is the weighted sum of
/// input rows indices[offsets[r] .. offsets[r+1]).
struct SparseRows {
  std::size_t input_rows = 0;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::vector<double> weights;

  std::size_t output_rows() const { return offsets.size() - 1; }

  void add(std::uint32_t index, double weight) {
    indices.push_back(index);
    weights.push_back(weight);
  }
  void finish_row() { offsets.push_back(static_cast<std::uint32_t>(indices.size())); }
};

template <typename T>
Tensor<T> sparse_rows(const std::shared_ptr<const SparseRows>& map,
                      const Tensor<T>& x) {
  detail_ops::require_rank2(x.shape(), "sparse_rows");
  if (x.dim(0) != map->input_rows) {
    throw ShapeError(detail::concat("sparse_rows: map expects ", map->input_rows,
                                    " input rows, got ", x.dim(0)));
  }
  const auto m = x.dim(1);
  const auto rows = map->output_rows();
  std::vector<T> out(rows * m, T(0));
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto t = map->offsets[r]; t < map->offsets[r + 1]; ++t) {
      const T w = static_cast<T>(map->weights[t]);
      const T* src = xv.data() + static_cast<std::size_t>(map->indices[t]) * m;
      T* dst = out.data() + r * m;
      for (std::size_t c = 0; c < m; ++c) dst[c] += w * src[c];
    }
  }
  return make_result<T>("sparse_rows", Shape{rows, m}, std::move(out), {x},
                        [map, m](Node<T>& node) {
                          auto* gx = parent_grad(node, 0);
                          if (!gx) return;
                          for (std::size_t r = 0; r < map->output_rows(); ++r) {
                            const T* g = node.grad.data() + r * m;
                            for (auto t = map->offsets[r]; t < map->offsets[r + 1]; ++t) {
                              const T w = static_cast<T>(map->weights[t]);
                              T* dst = gx->data() +
                                       static_cast<std::size_t>(map->indices[t]) * m;
                              for (std::size_t c = 0; c < m; ++c) dst[c] += w * g[c];
                            }
                          }
                        });
}

/// Sparse map sampling a per-voxel field at `points` by trilinear
/// interpolation (zero outside the grid).
inline std::shared_ptr<const SparseRows> trilinear_map(const GridGeometry& g,
                                                       std::span<const Vec3> points) {
  auto map = std::make_shared<SparseRows>();
  map->input_rows = g.voxel_count();
  map->offsets.reserve(points.size() + 1);
  map->indices.reserve(points.size() * 8);
  map->weights.reserve(points.size() * 8);
  for (const auto& p : points) {
    const auto taps = trilinear_taps(g, p);
    for (int t = 0; t < taps.count; ++t) map->add(taps.taps[t].voxel, taps.taps[t].weight);
    map->finish_row();
  }
  return map;
}

/// Trilinear sampling of a per-voxel field [V, C] at world points -> [P, C].
template <typename T>
Tensor<T> trilinear_sample(const Tensor<T>& field, const GridGeometry& g,
                           std::span<const Vec3> points) {
  return sparse_rows(trilinear_map(g, points), field);
}

}  // namespace occworld::ad
