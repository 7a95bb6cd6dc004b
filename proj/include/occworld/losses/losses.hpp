// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training objectives: 2D rendering losses on rendered rays, 3D occupancy
// losses on per-voxel logits and the ego trajectory loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "occworld/autodiff/ops.hpp"
#include "occworld/core/binary_io.hpp"
#include "occworld/render/raygen.hpp"
#include "occworld/render/renderer.hpp"

namespace occworld::losses {

using ad::Tensor;

struct LossWeights {
  double depth = 1.0;
  double semantic = 1.0;
  double rgb = 1.0;
  double focal = 1.0;
  double lovasz = 1.0;
  double scal_sem = 1.0;
  double scal_geo = 1.0;
  double trajectory = 1.0;

  void validate() const {
    for (double w : {depth, semantic, rgb, focal, lovasz, scal_sem, scal_geo, trajectory}) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw UsageError(detail::concat("loss weights must be finite and >= 0, got ", w));
      }
    }
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline constexpr double kSilogBeta = 0.85;
inline constexpr double kSilogMinDepth = 1e-3;
inline constexpr double kFocalGamma = 2.0;
/// Rays rendered with less opacity carry no depth/semantic supervision.
inline constexpr double kMinSupervisedOpacity = 0.05;

namespace detail_loss {

inline std::vector<std::uint32_t> mask_indices(std::span<const char> mask) {
  std::vector<std::uint32_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) idx.push_back(static_cast<std::uint32_t>(i));
  }
  return idx;
}

template <typename T>
Tensor<T> as_column(const Tensor<T>& x) {
  return x.rank() == 2 ? x : ad::reshape(x, {x.size(), 1});
}

template <typename T>
Tensor<T> safe_log(const Tensor<T>& x) {
  return ad::log(ad::clamp_min(x, T(1e-12)));
}

}  // namespace detail_loss

/// Scale-invariant log depth error over masked rays:
/// sqrt(mean(g^2) - beta mean(g)^2) with g = ln(max(pred, 1e-3)) - ln(gt).
template <typename T>
Tensor<T> silog_depth_loss(const Tensor<T>& pred, std::span<const float> gt,
                           std::span<const char> mask, double beta = kSilogBeta) {
  if (gt.size() != pred.size() || mask.size() != pred.size()) {
    throw ShapeError(detail::concat("silog: ", pred.size(), " predictions, ", gt.size(),
                                    " targets, ", mask.size(), " mask entries"));
  }
  const auto idx = detail_loss::mask_indices(mask);
  if (idx.empty()) throw UsageError("silog: empty mask");
  std::vector<T> log_gt;
  log_gt.reserve(idx.size());
  for (auto i : idx) {
    if (!(gt[i] > 0.0f)) throw DataError("silog: masked target depth must be > 0");
    log_gt.push_back(static_cast<T>(std::log(static_cast<double>(gt[i]))));
  }
  const auto p = ad::gather_rows(detail_loss::as_column(pred), idx);
  const auto g = ad::sub(ad::log(ad::clamp_min(p, static_cast<T>(kSilogMinDepth))),
                         Tensor<T>::constant({idx.size(), 1}, std::move(log_gt)));
  const auto m = ad::mean(g);
  return ad::sqrt(ad::sub(ad::mean(ad::square(g)), ad::scale(ad::square(m), static_cast<T>(beta))));
}

/// Mean cross-entropy of softmax(pred logits [R, Ds]) against gt over masked
/// rays.
template <typename T>
Tensor<T> semantic_ce_loss(const Tensor<T>& logits, std::span<const std::uint8_t> gt,
                           std::span<const char> mask) {
  const auto rows = logits.dim(0), ds = logits.dim(1);
  if (gt.size() != rows || mask.size() != rows) {
    throw ShapeError(detail::concat("semantic CE: ", rows, " rays, ", gt.size(), " targets, ",
                                    mask.size(), " mask entries"));
  }
  const auto idx = detail_loss::mask_indices(mask);
  if (idx.empty()) throw UsageError("semantic CE: empty mask");
  std::vector<T> onehot(idx.size() * ds, T(0));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto c = gt[idx[r]];
    if (c >= ds) {
      throw DataError(detail::concat("semantic CE: category ", int(c), " outside [0, ", ds, ")"));
    }
    onehot[r * ds + c] = T(1);
  }
  const auto lsm = ad::log_softmax_rows(ad::gather_rows(logits, idx));
  return ad::scale(ad::sum(ad::mul(lsm, Tensor<T>::constant({idx.size(), ds}, std::move(onehot)))),
                   T(-1) / static_cast<T>(idx.size()));
}

/// Mean absolute error over rays and channels.
template <typename T>
Tensor<T> rgb_l1_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("rgb L1: shapes " + ad::to_string(pred.shape()) + " and " +
                     ad::to_string(gt.shape()) + " differ");
  }
  return ad::mean(ad::abs(ad::sub(pred, gt)));
}

/// One frame's rendered rays (packed [R, 2 + Ds + 3]) with their labels.
template <typename T>
struct RenderedFrame {
  Tensor<T> packed;
  std::vector<render::RayLabel> labels;
};

template <typename T>
struct Temporal2DLoss {
  Tensor<T> total;
  // Per-frame component values (NaN when a component was skipped).
  std::vector<double> depth, semantic, rgb;
};

/// Sum over frames of weighted depth (SILog), semantic (CE) and RGB (L1)
/// terms. Depth and semantic terms use rays with a valid label and rendered
/// opacity >= kMinSupervisedOpacity; RGB uses every ray, escaped rays
/// targeting black. Components with an empty mask or zero weight are
/// skipped.
template <typename T>
Temporal2DLoss<T> temporal_2d_loss(const std::vector<RenderedFrame<T>>& frames,
                                   const LossWeights& w) {
  w.validate();
  Temporal2DLoss<T> out;
  std::vector<Tensor<T>> terms;
  const double nan = std::nan("");
  for (const auto& fr : frames) {
    const auto rows = fr.packed.dim(0);
    const auto ds = fr.packed.dim(1) - 5;
    if (fr.labels.size() != rows) {
      throw ShapeError(detail::concat("temporal 2D loss: ", rows, " rendered rays but ",
                                      fr.labels.size(), " labels"));
    }
    const auto cols = render::split_rendered(fr.packed);
    std::vector<char> mask(rows, 0);
    std::vector<float> depth(rows, 0.0f);
    std::vector<std::uint8_t> sem(rows, 0);
    std::vector<T> rgb(rows * 3);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& l = fr.labels[r];
      const bool sem_ok = l.semantic != scene::kInvalidSemantic && l.semantic < ds;
      mask[r] = l.valid() && sem_ok &&
                cols.opacity.values()[r] >= static_cast<T>(kMinSupervisedOpacity);
      depth[r] = l.depth;
      sem[r] = sem_ok ? l.semantic : 0;
      for (int k = 0; k < 3; ++k) rgb[r * 3 + k] = static_cast<T>(l.rgb[k]);
    }
    const bool any = std::any_of(mask.begin(), mask.end(), [](char m) { return m != 0; });
    double dv = nan, sv = nan, cv = nan;
    if (w.depth > 0 && any) {
      auto t = silog_depth_loss(cols.depth, depth, mask);
      dv = static_cast<double>(t.item());
      terms.push_back(ad::scale(t, static_cast<T>(w.depth)));
    }
    if (w.semantic > 0 && any) {
      auto t = semantic_ce_loss(cols.semantics, sem, mask);
      sv = static_cast<double>(t.item());
      terms.push_back(ad::scale(t, static_cast<T>(w.semantic)));
    }
    if (w.rgb > 0 && rows > 0) {
      auto t = rgb_l1_loss(cols.color, Tensor<T>::constant({rows, 3}, std::move(rgb)));
      cv = static_cast<double>(t.item());
      terms.push_back(ad::scale(t, static_cast<T>(w.rgb)));
    }
    out.depth.push_back(dv);
    out.semantic.push_back(sv);
    out.rgb.push_back(cv);
  }
  out.total = Tensor<T>::scalar(T(0));
  for (const auto& t : terms) out.total = ad::add(out.total, t);
  return out;
}

/// Mean over voxels of -(1 - p_gt)^gamma ln p_gt with p = softmax(logits).
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, std::span<const std::uint8_t> gt,
                     double gamma = kFocalGamma) {
  const auto v = logits.dim(0), c = logits.dim(1);
  if (gt.size() != v) {
    throw ShapeError(detail::concat("focal: ", v, " voxels but ", gt.size(), " targets"));
  }
  if (!(gamma >= 0.0)) throw UsageError("focal: gamma must be >= 0");
  std::vector<T> lsm(v * c);
  T total = T(0);
  const auto& x = logits.values();
  for (std::size_t i = 0; i < v; ++i) {
    const T* row = x.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t k = 0; k < c; ++k) lsm[i * c + k] = row[k] - lse;
    if (gt[i] >= c) throw DataError(detail::concat("focal: category ", int(gt[i]), " >= ", c));
    const T lp = lsm[i * c + gt[i]];
    const T q = -std::expm1(lp);  // 1 - p
    total += -std::pow(q, static_cast<T>(gamma)) * lp;
  }
  std::vector<std::uint8_t> target(gt.begin(), gt.end());
  return ad::make_result<T>(
      "focal", ad::Shape{1}, {total / static_cast<T>(v)}, {logits},
      [v, c, gamma, lsm = std::move(lsm), target = std::move(target)](ad::Node<T>& n) {
        auto* gx = ad::parent_grad(n, 0);
        if (!gx) return;
        const T g = n.grad[0] / static_cast<T>(v);
        const T gm = static_cast<T>(gamma);
        for (std::size_t i = 0; i < v; ++i) {
          const T lp = lsm[i * c + target[i]];
          const T p = std::exp(lp);
          const T q = -std::expm1(lp);
          // dL/dz_j = A (delta_tj - p_j)
          T a = -std::pow(q, gm);
          if (gamma != 0.0 && q > T(0)) a += gm * std::pow(q, gm - T(1)) * p * lp;
          for (std::size_t k = 0; k < c; ++k) {
            const T pk = std::exp(lsm[i * c + k]);
            (*gx)[i * c + k] += g * a * ((k == target[i] ? T(1) : T(0)) - pk);
          }
        }
      });
}

/// Lovasz-softmax over per-voxel class probabilities [V, C]: the Lovasz
/// extension of each category's Jaccard loss, averaged over the categories
/// present in gt.
template <typename T>
Tensor<T> lovasz_softmax_loss(const Tensor<T>& probs, std::span<const std::uint8_t> gt) {
  const auto v = probs.dim(0), c = probs.dim(1);
  if (gt.size() != v) {
    throw ShapeError(detail::concat("lovasz: ", v, " voxels but ", gt.size(), " targets"));
  }
  std::vector<std::size_t> present;
  {
    std::vector<std::size_t> count(c, 0);
    for (auto g : gt) {
      if (g >= c) throw DataError(detail::concat("lovasz: category ", int(g), " >= ", c));
      ++count[g];
    }
    for (std::size_t k = 0; k < c; ++k) {
      if (count[k]) present.push_back(k);
    }
  }
  // d loss / d p for every entry, filled while computing the value.
  std::vector<T> dp(v * c, T(0));
  T total = T(0);
  const auto& p = probs.values();
  std::vector<std::uint32_t> order(v);
  std::vector<T> err(v);
  for (auto k : present) {
    std::size_t gts = 0;
    for (std::size_t i = 0; i < v; ++i) {
      const bool fg = gt[i] == k;
      gts += fg;
      err[i] = fg ? T(1) - p[i * c + k] : p[i * c + k];
    }
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return err[a] > err[b]; });
    double cum_fg = 0, cum_bg = 0, prev_jac = 0;
    for (std::size_t r = 0; r < v; ++r) {
      const auto i = order[r];
      const bool fg = gt[i] == k;
      cum_fg += fg;
      cum_bg += !fg;
      const double inter = static_cast<double>(gts) - cum_fg;
      const double uni = static_cast<double>(gts) + cum_bg;
      const double jac = 1.0 - inter / uni;
      const T grad = static_cast<T>(jac - prev_jac);
      prev_jac = jac;
      total += err[i] * grad;
      dp[i * c + k] = fg ? -grad : grad;
    }
  }
  const T scale = present.empty() ? T(0) : T(1) / static_cast<T>(present.size());
  for (auto& d : dp) d *= scale;
  return ad::make_result<T>("lovasz_softmax", ad::Shape{1}, {total * scale}, {probs},
                            [dp = std::move(dp)](ad::Node<T>& n) {
                              auto* gx = ad::parent_grad(n, 0);
                              if (!gx) return;
                              for (std::size_t i = 0; i < dp.size(); ++i) {
                                (*gx)[i] += n.grad[0] * dp[i];
                              }
                            });
}

template <typename T>
struct AffinityLosses {
  Tensor<T> sem;
  Tensor<T> geo;
};

/// Scene-class affinity terms over per-voxel probabilities [V, C] whose last
/// column is the free category. sem averages -(ln P + ln R + ln S) over the
/// categories present in gt; geo applies the same three terms once to
/// occupied-versus-free with q = 1 - p_free. Terms whose denominator is
/// empty are skipped.
template <typename T>
AffinityLosses<T> scene_class_affinity_losses(const Tensor<T>& probs,
                                              std::span<const std::uint8_t> gt) {
  using detail_loss::safe_log;
  const auto v = probs.dim(0), c = probs.dim(1);
  if (gt.size() != v) {
    throw ShapeError(detail::concat("affinity: ", v, " voxels but ", gt.size(), " targets"));
  }
  const std::size_t free = c - 1;

  // -(ln P + ln R + ln S) for a soft score column q [V, 1] against a hard mask.
  auto terms = [&](const Tensor<T>& q, const std::vector<char>& target) -> Tensor<T> {
    std::vector<T> y(v), ny(v);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < v; ++i) {
      y[i] = target[i] ? T(1) : T(0);
      ny[i] = T(1) - y[i];
      pos += target[i] != 0;
    }
    const auto yt = Tensor<T>::constant({v, 1}, std::move(y));
    const auto nyt = Tensor<T>::constant({v, 1}, std::move(ny));
    const auto tp = ad::sum(ad::mul(q, yt));
    auto loss = Tensor<T>::scalar(T(0));
    const auto q_sum = ad::sum(q);
    if (q_sum.item() > T(0)) loss = ad::sub(loss, safe_log(ad::div(tp, q_sum)));
    if (pos > 0) {
      loss = ad::sub(loss, safe_log(ad::scale(tp, T(1) / static_cast<T>(pos))));
    }
    if (pos < v) {
      const auto tn = ad::sum(ad::mul(ad::add_scalar(ad::neg(q), T(1)), nyt));
      loss = ad::sub(loss, safe_log(ad::scale(tn, T(1) / static_cast<T>(v - pos))));
    }
    return loss;
  };

  AffinityLosses<T> out;
  std::vector<std::size_t> count(c, 0);
  for (auto g : gt) {
    if (g >= c) throw DataError(detail::concat("affinity: category ", int(g), " >= ", c));
    ++count[g];
  }
  out.sem = Tensor<T>::scalar(T(0));
  std::size_t valid = 0;
  std::vector<char> target(v);
  for (std::size_t k = 0; k < c; ++k) {
    if (!count[k]) continue;
    for (std::size_t i = 0; i < v; ++i) target[i] = gt[i] == k;
    out.sem = ad::add(out.sem, terms(ad::slice_cols(probs, k, 1), target));
    ++valid;
  }
  if (valid) out.sem = ad::scale(out.sem, T(1) / static_cast<T>(valid));
  for (std::size_t i = 0; i < v; ++i) target[i] = gt[i] != free;
  out.geo = terms(ad::add_scalar(ad::neg(ad::slice_cols(probs, free, 1)), T(1)), target);
  return out;
}

template <typename T>
struct Occupancy3DLoss {
  Tensor<T> total;
  double focal = 0, lovasz = 0, scal_sem = 0, scal_geo = 0;
};

/// Weighted focal + Lovasz-softmax + affinity terms for logits [V, C].
/// Zero-weight components are not evaluated.
template <typename T>
Occupancy3DLoss<T> occupancy_3d_loss(const Tensor<T>& logits, std::span<const std::uint8_t> gt,
                                     const LossWeights& w) {
  w.validate();
  Occupancy3DLoss<T> out;
  out.total = Tensor<T>::scalar(T(0));
  if (w.focal > 0) {
    const auto f = focal_loss(logits, gt);
    out.focal = static_cast<double>(f.item());
    out.total = ad::add(out.total, ad::scale(f, static_cast<T>(w.focal)));
  }
  if (w.lovasz > 0 || w.scal_sem > 0 || w.scal_geo > 0) {
    const auto probs = ad::softmax_rows(logits);
    if (w.lovasz > 0) {
      const auto l = lovasz_softmax_loss(probs, gt);
      out.lovasz = static_cast<double>(l.item());
      out.total = ad::add(out.total, ad::scale(l, static_cast<T>(w.lovasz)));
    }
    if (w.scal_sem > 0 || w.scal_geo > 0) {
      const auto a = scene_class_affinity_losses(probs, gt);
      out.scal_sem = static_cast<double>(a.sem.item());
      out.scal_geo = static_cast<double>(a.geo.item());
      if (w.scal_sem > 0) out.total = ad::add(out.total, ad::scale(a.sem, static_cast<T>(w.scal_sem)));
      if (w.scal_geo > 0) out.total = ad::add(out.total, ad::scale(a.geo, static_cast<T>(w.scal_geo)));
    }
  }
  return out;
}

/// Mean over horizon steps of the squared distance between predicted
/// waypoints (any shape holding 2f values, (x, y) interleaved) and gt.
template <typename T>
Tensor<T> trajectory_l2_loss(const Tensor<T>& pred, const std::vector<Vec2>& gt) {
  if (pred.size() != 2 * gt.size()) {
    throw ShapeError(detail::concat("trajectory loss: prediction holds ", pred.size() / 2,
                                    " waypoints, target ", gt.size()));
  }
  if (gt.empty()) throw ShapeError("trajectory loss: empty horizon");
  std::vector<T> target;
  for (const auto& p : gt) {
    target.push_back(static_cast<T>(p.x()));
    target.push_back(static_cast<T>(p.y()));
  }
  const auto flat = ad::reshape(pred, {pred.size()});
  const std::size_t n = target.size();
  const auto d = ad::sub(flat, Tensor<T>::constant({n}, std::move(target)));
  return ad::scale(ad::sum(ad::square(d)), T(1) / static_cast<T>(gt.size()));
}

/// Appends (step, stage, component, value) rows to a CSV file.
class LossLog {
 public:
  LossLog() = default;
  explicit LossLog(const std::filesystem::path& path) : path_(path) {
    const bool fresh = !std::filesystem::exists(path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw DataError("cannot open loss log " + path.string());
    if (fresh) out_ << "step,stage,component,value\n";
  }

  bool enabled() const { return out_.is_open(); }

  void append(std::size_t step, const std::string& stage, const std::string& component,
              double value) {
    if (!enabled()) return;
    out_ << step << ',' << stage << ',' << component << ',' << value << '\n';
  }

  void flush() {
    if (enabled()) out_.flush();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace occworld::losses
