// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable volume rendering of voxel attribute fields. Along each ray
// with samples u_m and intervals d_m:
//   T_m = exp(-sum_{p<m} sigma_p d_p),  w_m = T_m (1 - exp(-sigma_m d_m))
//   depth = sum w_m u_m, semantics = sum w_m s_m, color = sum w_m c_m,
//   opacity = sum w_m
// Field values at sample points are trilinear in the voxel values, so the
// whole map is differentiable with respect to every voxel attribute.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <thread>
#include <vector>

#include "occworld/autodiff/ops.hpp"
#include "occworld/render/raygen.hpp"

namespace occworld::render {

/// sigma * delta is clamped here before exponentiation.
inline constexpr double kMaxOpticalDepth = 80.0;

/// Density [V, 1] (non-negative), semantic logits [V, Ds] and color [V, 3]
/// over one voxel lattice.
template <typename T>
struct AttributeFields {
  GridGeometry geometry;
  ad::Tensor<T> density;
  ad::Tensor<T> semantics;
  ad::Tensor<T> color;

  std::size_t semantic_dim() const { return semantics.dim(1); }

  void validate() const {
    const auto v = geometry.voxel_count();
    auto check = [v](const ad::Tensor<T>& t, const char* name, std::size_t cols) {
      if (t.rank() != 2 || t.dim(0) != v || (cols && t.dim(1) != cols)) {
        throw ShapeError(detail::concat("attribute field '", name, "' has shape ",
                                        ad::to_string(t.shape()), ", expected [", v,
                                        ", ", cols ? std::to_string(cols) : "D", "]"));
      }
    };
    check(density, "density", 1);
    check(semantics, "semantics", 0);
    check(color, "color", 3);
  }
};

template <typename T>
struct FieldSample {
  T density = T(0);
  std::vector<T> semantics;
  std::array<T, 3> color{};
};

/// Trilinear evaluation of all three fields at an ego-frame point; zero
/// outside the grid.
template <typename T>
FieldSample<T> field_at(const AttributeFields<T>& f, const Vec3& p) {
  FieldSample<T> out;
  const auto ds = f.semantic_dim();
  out.semantics.assign(ds, T(0));
  const auto taps = trilinear_taps(f.geometry, p);
  for (int t = 0; t < taps.count; ++t) {
    const auto v = taps.taps[t].voxel;
    const T w = static_cast<T>(taps.taps[t].weight);
    out.density += w * f.density.values()[v];
    for (std::size_t c = 0; c < ds; ++c) out.semantics[c] += w * f.semantics.values()[v * ds + c];
    for (std::size_t c = 0; c < 3; ++c) out.color[c] += w * f.color.values()[v * 3 + c];
  }
  return out;
}

template <typename T>
struct RenderedPixel {
  T depth = T(0);
  std::vector<T> semantics;
  std::array<T, 3> color{};
  T opacity = T(0);
};

/// Rays, sample depths/intervals and trilinear taps, precomputed once per
/// bundle and grid.
struct RenderPlan {
  GridGeometry geometry;
  std::vector<std::uint32_t> ray_offsets{0};  // into the sample arrays
  std::vector<double> depths;
  std::vector<double> deltas;
  std::shared_ptr<ad::SparseRows> taps = std::make_shared<ad::SparseRows>();

  std::size_t ray_count() const { return ray_offsets.size() - 1; }
  std::size_t sample_count() const { return depths.size(); }

  void add(const RaySamples& s) {
    for (std::size_t m = 0; m < s.size(); ++m) {
      depths.push_back(s.depths[m]);
      deltas.push_back(s.deltas[m]);
      const auto tt = trilinear_taps(geometry, s.ray.at(s.depths[m]));
      for (int t = 0; t < tt.count; ++t) taps->add(tt.taps[t].voxel, tt.taps[t].weight);
      taps->finish_row();
    }
    ray_offsets.push_back(static_cast<std::uint32_t>(depths.size()));
  }
};

inline RenderPlan make_plan(const GridGeometry& g, std::span<const RaySamples> samples) {
  RenderPlan plan;
  plan.geometry = g;
  plan.taps->input_rows = g.voxel_count();
  for (const auto& s : samples) plan.add(s);
  return plan;
}

/// Plan for a ray list with `count` stratified samples per ray. Jittered
/// plans derive one seed per ray from `seed`.
inline RenderPlan make_plan(const GridGeometry& g, std::span<const Ray> rays, int count,
                            bool jitter = false, std::uint64_t seed = 0) {
  RenderPlan plan;
  plan.geometry = g;
  plan.taps->input_rows = g.voxel_count();
  plan.depths.reserve(rays.size() * static_cast<std::size_t>(count));
  for (std::size_t r = 0; r < rays.size(); ++r) {
    plan.add(sample_along(rays[r], count, jitter, Rng::mix(seed + r)));
  }
  return plan;
}

struct RenderOptions {
  /// 1 renders serially with a fixed accumulation order. More threads split
  /// rays into contiguous chunks; backward then reduces per-thread gradient
  /// buffers in chunk order.
  unsigned threads = 1;
};

namespace detail_render {

/// Packed output row: [depth, opacity, semantics..., r, g, b].
inline std::size_t packed_width(std::size_t ds) { return 2 + ds + 3; }

template <typename T>
struct FieldViews {
  const T* density;
  const T* semantics;
  const T* color;
  std::size_t ds;
};

/// Per-sample state handed to march() visitors.
template <typename T>
struct SampleState {
  std::uint32_t sample;  // index into the plan's sample arrays
  T sigma;
  const T* semantics;
  const T* color;
  T transmittance;  // before this sample
  T next_transmittance;
  T weight;
  bool clamped;
};

/// Walks the samples of ray r front to back.
template <typename T, typename Visit>
void march(const RenderPlan& plan, const FieldViews<T>& f, std::size_t r, std::vector<T>& s,
           Visit&& visit) {
  const auto& taps = *plan.taps;
  s.assign(f.ds, T(0));
  T trans = T(1);
  for (auto m = plan.ray_offsets[r]; m < plan.ray_offsets[r + 1]; ++m) {
    T sigma = T(0);
    std::fill(s.begin(), s.end(), T(0));
    std::array<T, 3> c{};
    for (auto t = taps.offsets[m]; t < taps.offsets[m + 1]; ++t) {
      const T tw = static_cast<T>(taps.weights[t]);
      const std::size_t v = taps.indices[t];
      sigma += tw * f.density[v];
      for (std::size_t k = 0; k < f.ds; ++k) s[k] += tw * f.semantics[v * f.ds + k];
      for (std::size_t k = 0; k < 3; ++k) c[k] += tw * f.color[v * 3 + k];
    }
    T a = sigma * static_cast<T>(plan.deltas[m]);
    const bool clamped = a > static_cast<T>(kMaxOpticalDepth);
    if (clamped) a = static_cast<T>(kMaxOpticalDepth);
    const T w = trans * -std::expm1(-a);
    const T next = trans * std::exp(-a);
    visit(SampleState<T>{m, sigma, s.data(), c.data(), trans, next, w, clamped});
    trans = next;
  }
}

template <typename T>
void forward_rays(const RenderPlan& plan, const FieldViews<T>& f, std::size_t begin,
                  std::size_t end, T* out) {
  const std::size_t width = packed_width(f.ds);
  std::vector<T> s;
  for (std::size_t r = begin; r < end; ++r) {
    T* row = out + r * width;
    std::fill(row, row + width, T(0));
    march(plan, f, r, s, [&](const SampleState<T>& st) {
      row[0] += st.weight * static_cast<T>(plan.depths[st.sample]);
      row[1] += st.weight;
      for (std::size_t k = 0; k < f.ds; ++k) row[2 + k] += st.weight * st.semantics[k];
      for (std::size_t k = 0; k < 3; ++k) row[2 + f.ds + k] += st.weight * st.color[k];
    });
  }
}

/// Accumulates field gradients for rays [begin, end) given the upstream
/// gradient of the packed output.
template <typename T>
void backward_rays(const RenderPlan& plan, const FieldViews<T>& f, const T* upstream,
                   std::size_t begin, std::size_t end, T* g_density, T* g_semantics,
                   T* g_color) {
  const auto& taps = *plan.taps;
  const std::size_t width = packed_width(f.ds);
  std::vector<T> w, trans_next, g, s;
  std::vector<char> clamped;
  for (std::size_t r = begin; r < end; ++r) {
    const T* up = upstream + r * width;
    const auto m0 = plan.ray_offsets[r];
    const auto count = plan.ray_offsets[r + 1] - m0;
    w.assign(count, T(0));
    trans_next.assign(count, T(0));
    g.assign(count, T(0));
    clamped.assign(count, 0);
    march(plan, f, r, s, [&](const SampleState<T>& st) {
      const auto i = st.sample - m0;
      w[i] = st.weight;
      trans_next[i] = st.next_transmittance;
      clamped[i] = st.clamped;
      // dL/dw_m
      T gm = up[0] * static_cast<T>(plan.depths[st.sample]) + up[1];
      for (std::size_t k = 0; k < f.ds; ++k) gm += up[2 + k] * st.semantics[k];
      for (std::size_t k = 0; k < 3; ++k) gm += up[2 + f.ds + k] * st.color[k];
      g[i] = gm;
    });
    // dL/da_j = g_j T_{j+1} - sum_{m>j} g_m w_m
    T suffix = T(0);
    for (std::uint32_t ii = count; ii-- > 0;) {
      const auto m = m0 + ii;
      const T d_a = g[ii] * trans_next[ii] - suffix;
      suffix += g[ii] * w[ii];
      const T d_sigma = clamped[ii] ? T(0) : d_a * static_cast<T>(plan.deltas[m]);
      for (auto t = taps.offsets[m]; t < taps.offsets[m + 1]; ++t) {
        const T tw = static_cast<T>(taps.weights[t]);
        const std::size_t v = taps.indices[t];
        if (g_density) g_density[v] += tw * d_sigma;
        if (g_semantics) {
          for (std::size_t k = 0; k < f.ds; ++k) {
            g_semantics[v * f.ds + k] += tw * w[ii] * up[2 + k];
          }
        }
        if (g_color) {
          for (std::size_t k = 0; k < 3; ++k) {
            g_color[v * 3 + k] += tw * w[ii] * up[2 + f.ds + k];
          }
        }
      }
    }
  }
}

template <typename F>
void for_chunks(std::size_t n, unsigned threads, F&& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    body(0u, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = std::min(n, t * chunk);
    const std::size_t e = std::min(n, b + chunk);
    pool.emplace_back([&body, t, b, e] { body(t, b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail_render

/// Transmittance before and weight of every sample of ray r.
template <typename T>
struct SampleWeights {
  std::vector<T> transmittance;  // T_m, plus T_{M+1} as the last entry
  std::vector<T> weights;        // w_m
};

template <typename T>
SampleWeights<T> sample_weights(const AttributeFields<T>& fields, const RenderPlan& plan,
                                std::size_t ray) {
  const detail_render::FieldViews<T> views{fields.density.values().data(),
                                           fields.semantics.values().data(),
                                           fields.color.values().data(),
                                           fields.semantic_dim()};
  SampleWeights<T> out;
  std::vector<T> s;
  T last = T(1);
  detail_render::march(plan, views, ray, s, [&](const detail_render::SampleState<T>& st) {
    out.transmittance.push_back(st.transmittance);
    out.weights.push_back(st.weight);
    last = st.next_transmittance;
  });
  out.transmittance.push_back(last);
  return out;
}

template <typename T>
struct FieldGradients {
  std::vector<T> density;    // [V]
  std::vector<T> semantics;  // [V * Ds]
  std::vector<T> color;      // [V * 3]
};

/// Reverse pass of the rendering map: field gradients for an upstream
/// gradient on the packed per-ray output [depth, opacity, semantics, rgb].
template <typename T>
FieldGradients<T> render_backward(const AttributeFields<T>& fields, const RenderPlan& plan,
                                  std::span<const T> upstream, RenderOptions opt = {}) {
  const auto ds = fields.semantic_dim();
  const auto v = fields.geometry.voxel_count();
  if (upstream.size() != plan.ray_count() * detail_render::packed_width(ds)) {
    throw ShapeError("render_backward: upstream gradient size mismatch");
  }
  const detail_render::FieldViews<T> views{fields.density.values().data(),
                                           fields.semantics.values().data(),
                                           fields.color.values().data(), ds};
  FieldGradients<T> out;
  out.density.assign(v, T(0));
  out.semantics.assign(v * ds, T(0));
  out.color.assign(v * 3, T(0));
  if (opt.threads <= 1) {
    detail_render::backward_rays(plan, views, upstream.data(), 0, plan.ray_count(),
                                 out.density.data(), out.semantics.data(), out.color.data());
    return out;
  }
  std::vector<FieldGradients<T>> partial(opt.threads);
  detail_render::for_chunks(plan.ray_count(), opt.threads,
                            [&](unsigned t, std::size_t b, std::size_t e) {
                              auto& p = partial[t];
                              p.density.assign(v, T(0));
                              p.semantics.assign(v * ds, T(0));
                              p.color.assign(v * 3, T(0));
                              detail_render::backward_rays(plan, views, upstream.data(), b, e,
                                                           p.density.data(), p.semantics.data(),
                                                           p.color.data());
                            });
  for (const auto& p : partial) {
    if (p.density.empty()) continue;
    for (std::size_t i = 0; i < v; ++i) out.density[i] += p.density[i];
    for (std::size_t i = 0; i < v * ds; ++i) out.semantics[i] += p.semantics[i];
    for (std::size_t i = 0; i < v * 3; ++i) out.color[i] += p.color[i];
  }
  return out;
}

/// Differentiable rendering op: returns the packed per-ray output
/// [R, 2 + Ds + 3] with columns depth, opacity, semantics, rgb.
template <typename T>
ad::Tensor<T> volume_render(const AttributeFields<T>& fields, std::shared_ptr<const RenderPlan> plan,
                     RenderOptions opt = {}) {
  fields.validate();
  if (!approx_same_geometry(fields.geometry, plan->geometry)) {
    throw ShapeError("volume_render: plan and fields use different grids");
  }
  const auto ds = fields.semantic_dim();
  const auto width = detail_render::packed_width(ds);
  std::vector<T> out(plan->ray_count() * width);
  const detail_render::FieldViews<T> views{fields.density.values().data(),
                                           fields.semantics.values().data(),
                                           fields.color.values().data(), ds};
  detail_render::for_chunks(plan->ray_count(), opt.threads,
                            [&](unsigned, std::size_t b, std::size_t e) {
                              detail_render::forward_rays(*plan, views, b, e, out.data());
                            });
  const GridGeometry geometry = fields.geometry;
  return ad::make_result<T>(
      "render", ad::Shape{plan->ray_count(), width}, std::move(out),
      {fields.density, fields.semantics, fields.color},
      [plan, opt, geometry](ad::Node<T>& n) {
        AttributeFields<T> f{geometry, ad::Tensor<T>(n.parents[0]),
                             ad::Tensor<T>(n.parents[1]), ad::Tensor<T>(n.parents[2])};
        auto grads = render_backward<T>(f, *plan, n.grad, opt);
        if (auto* g = ad::parent_grad(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += grads.density[i];
        }
        if (auto* g = ad::parent_grad(n, 1)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += grads.semantics[i];
        }
        if (auto* g = ad::parent_grad(n, 2)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += grads.color[i];
        }
      });
}

/// Column views of the packed render output.
template <typename T>
struct RenderedColumns {
  ad::Tensor<T> depth;      // [R, 1]
  ad::Tensor<T> opacity;    // [R, 1]
  ad::Tensor<T> semantics;  // [R, Ds]
  ad::Tensor<T> color;      // [R, 3]
};

template <typename T>
RenderedColumns<T> split_rendered(const ad::Tensor<T>& packed) {
  const auto ds = packed.dim(1) - 5;
  return {ad::slice_cols(packed, 0, 1), ad::slice_cols(packed, 1, 1),
          ad::slice_cols(packed, 2, ds), ad::slice_cols(packed, 2 + ds, 3)};
}

template <typename T>
std::vector<RenderedPixel<T>> unpack_pixels(const ad::Tensor<T>& packed) {
  const auto r = packed.dim(0);
  const auto width = packed.dim(1);
  const auto ds = width - 5;
  std::vector<RenderedPixel<T>> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = packed.values().data() + i * width;
    out[i].depth = row[0];
    out[i].opacity = row[1];
    out[i].semantics.assign(row + 2, row + 2 + ds);
    for (int k = 0; k < 3; ++k) out[i].color[k] = row[2 + ds + k];
  }
  return out;
}

template <typename T>
RenderedPixel<T> render_ray(const AttributeFields<T>& fields, const RaySamples& samples) {
  const RaySamples one[] = {samples};
  auto plan = std::make_shared<const RenderPlan>(make_plan(fields.geometry, one));
  return unpack_pixels(volume_render(fields, plan)).front();
}

/// Renders every ray with `count` midpoint samples; output order follows the
/// bundle.
template <typename T>
std::vector<RenderedPixel<T>> render_bundle(const AttributeFields<T>& fields,
                                            const RayBundle& bundle, int count,
                                            RenderOptions opt = {}) {
  if (bundle.rays.empty()) return {};
  auto plan = std::make_shared<const RenderPlan>(
      make_plan(fields.geometry, std::span<const Ray>(bundle.rays), count));
  return unpack_pixels(volume_render(fields, plan, opt));
}

/// Renderable fields for a ground-truth grid: `density` on occupied voxels,
/// one-hot semantics over the non-free categories and per-category albedo.
template <typename T>
AttributeFields<T> fields_from_grid(const SemanticGrid& grid,
                                    const std::vector<std::array<float, 3>>& albedo,
                                    T density) {
  const auto v = grid.geometry().voxel_count();
  const auto ds = static_cast<std::size_t>(grid.num_categories() - 1);
  std::vector<T> d(v, T(0)), s(v * ds, T(0)), c(v * 3, T(0));
  for (std::size_t i = 0; i < v; ++i) {
    const int cat = grid.at(i);
    if (cat == grid.free_category()) continue;
    d[i] = density;
    s[i * ds + static_cast<std::size_t>(cat)] = T(1);
    for (int k = 0; k < 3; ++k) {
      c[i * 3 + k] = static_cast<std::size_t>(cat) < albedo.size() ? albedo[cat][k] : T(0.5);
    }
  }
  return {grid.geometry(), ad::Tensor<T>::constant({v, 1}, std::move(d)),
          ad::Tensor<T>::constant({v, ds}, std::move(s)),
          ad::Tensor<T>::constant({v, 3}, std::move(c))};
}

}  // namespace occworld::render
