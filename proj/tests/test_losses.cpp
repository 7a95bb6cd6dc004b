// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "occworld/autodiff/gradcheck.hpp"
#include "occworld/losses/losses.hpp"

using namespace occworld;
using namespace occworld::losses;
using TD = ad::Tensor<double>;

namespace {

std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t n, int c) {
  std::vector<std::uint8_t> out(n);
  for (auto& x : out) x = static_cast<std::uint8_t>(rng.uniform_int(0, c - 1));
  return out;
}

TD one_hot_logits(const std::vector<std::uint8_t>& gt, std::size_t c, double big) {
  std::vector<double> v(gt.size() * c, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) v[i * c + gt[i]] = big;
  return TD::parameter({gt.size(), c}, v);
}

TD one_hot_probs(const std::vector<std::uint8_t>& gt, std::size_t c) {
  std::vector<double> v(gt.size() * c, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) v[i * c + gt[i]] = 1.0;
  return TD::parameter({gt.size(), c}, v);
}

/// Lovasz extension evaluated from its definition: errors sorted
/// descending, each weighted by the increase of the Jaccard loss of the
/// growing mispredicted set.
double lovasz_bruteforce(const std::vector<double>& p, std::size_t c,
                         const std::vector<std::uint8_t>& gt) {
  const std::size_t v = gt.size();
  double total = 0;
  int present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::set<std::size_t> g;
    for (std::size_t i = 0; i < v; ++i) {
      if (gt[i] == k) g.insert(i);
    }
    if (g.empty()) continue;
    ++present;
    std::vector<std::pair<double, std::size_t>> e;
    for (std::size_t i = 0; i < v; ++i) {
      e.emplace_back(gt[i] == k ? 1 - p[i * c + k] : p[i * c + k], i);
    }
    std::stable_sort(e.begin(), e.end(), [](auto a, auto b) { return a.first > b.first; });
    auto jaccard_loss = [&](const std::set<std::size_t>& wrong) {
      // predicted set = (G \ wrong) U (wrong \ G)
      std::set<std::size_t> pred;
      for (auto i : g) {
        if (!wrong.count(i)) pred.insert(i);
      }
      for (auto i : wrong) {
        if (!g.count(i)) pred.insert(i);
      }
      std::size_t inter = 0;
      for (auto i : pred) inter += g.count(i);
      const std::size_t uni = g.size() + pred.size() - inter;
      return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
    };
    std::set<std::size_t> wrong;
    double prev = 0;
    for (auto [err, i] : e) {
      wrong.insert(i);
      const double j = jaccard_loss(wrong);
      total += err * (j - prev);
      prev = j;
    }
  }
  return total / present;
}

/// Literal loop transcription of the affinity terms.
std::pair<double, double> affinity_literal(const std::vector<double>& p, std::size_t c,
                                           const std::vector<std::uint8_t>& gt) {
  const std::size_t v = gt.size();
  auto terms = [&](auto q, auto is_pos) {
    double tp = 0, qs = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < v; ++i) {
      const double qi = q(i);
      qs += qi;
      if (is_pos(i)) {
        tp += qi;
        pos += 1;
      } else {
        tn += 1 - qi;
        neg += 1;
      }
    }
    double l = 0;
    if (qs > 0) l -= std::log(std::max(tp / qs, 1e-12));
    if (pos > 0) l -= std::log(std::max(tp / pos, 1e-12));
    if (neg > 0) l -= std::log(std::max(tn / neg, 1e-12));
    return l;
  };
  double sem = 0;
  int valid = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (std::count(gt.begin(), gt.end(), k) == 0) continue;
    ++valid;
    sem += terms([&](std::size_t i) { return p[i * c + k]; },
                 [&](std::size_t i) { return gt[i] == k; });
  }
  const double geo = terms([&](std::size_t i) { return 1 - p[i * c + c - 1]; },
                           [&](std::size_t i) { return gt[i] != c - 1; });
  return {sem / valid, geo};
}

void expect_grad_ok(const ad::GradcheckResult& r, const char* what) {
  EXPECT_TRUE(r.ok) << what << ": " << r.worst;
}

}  // namespace

TEST(LossWeights, DefaultsAndValidation) {
  LossWeights w;
  EXPECT_EQ(w.depth, 1.0);
  EXPECT_EQ(w.trajectory, 1.0);
  w.rgb = -1;
  EXPECT_THROW(w.validate(), UsageError);
}

TEST(Silog, ZeroAtPerfectPrediction) {
  const std::vector<float> gt{1.0f, 2.5f, 7.0f, 0.4f};
  const std::vector<char> mask{1, 1, 1, 1};
  auto pred = TD::constant({4, 1}, {1.0, 2.5, 7.0, 0.4});
  EXPECT_NEAR(silog_depth_loss(pred, gt, mask).item(), 0.0, 1e-6);
}

TEST(Silog, DoubledDepthClosedForm) {
  const std::vector<float> gt{1.0f, 2.0f, 3.0f, 10.0f};
  const std::vector<char> mask{1, 1, 1, 1};
  auto pred = TD::constant({4, 1}, {2.0, 4.0, 6.0, 20.0});
  EXPECT_NEAR(silog_depth_loss(pred, gt, mask).item(), std::log(2.0) * std::sqrt(0.15), 1e-6);
  EXPECT_NEAR(std::log(2.0) * std::sqrt(0.15), 0.2685, 1e-4);
}

TEST(Silog, MaskClampAndErrors) {
  const std::vector<float> gt{1.0f, 0.0f, 2.0f};
  const std::vector<char> mask{1, 0, 1};
  auto pred = TD::constant({3, 1}, {1.0, 123.0, 2.0});
  EXPECT_NEAR(silog_depth_loss(pred, gt, mask).item(), 0.0, 1e-6);
  const std::vector<char> none{0, 0, 0};
  EXPECT_THROW(silog_depth_loss(pred, gt, none), UsageError);
  // Predictions below 1e-3 are clamped.
  auto tiny = TD::constant({3, 1}, {-5.0, 1.0, 1e-3});
  auto clamp = TD::constant({3, 1}, {1e-3, 1.0, 1e-3});
  const std::vector<char> m2{1, 0, 1};
  EXPECT_DOUBLE_EQ(silog_depth_loss(tiny, gt, m2).item(), silog_depth_loss(clamp, gt, m2).item());
}

TEST(Silog, Gradcheck) {
  Rng rng(1);
  std::vector<float> gt(8);
  for (auto& g : gt) g = static_cast<float>(rng.uniform(0.5, 20.0));
  const std::vector<char> mask{1, 1, 0, 1, 1, 1, 0, 1};
  auto pred = ad::random_tensor({8, 1}, rng, 0.5, 20.0);
  expect_grad_ok(ad::gradcheck([&](const auto& in) { return silog_depth_loss(in[0], gt, mask); },
                               {pred}),
                 "silog");
}

TEST(SemanticCe, LimitsAndGradcheck) {
  const std::vector<std::uint8_t> gt{0, 3, 2, 1};
  const std::vector<char> mask{1, 1, 1, 1};
  EXPECT_NEAR(semantic_ce_loss(one_hot_logits(gt, 5, 60.0), gt, mask).item(), 0.0, 1e-12);
  EXPECT_NEAR(semantic_ce_loss(TD::constant({4, 5}, 0.3), gt, mask).item(), std::log(5.0), 1e-12);
  const std::vector<char> none(4, 0);
  EXPECT_THROW(semantic_ce_loss(TD::constant({4, 5}, 0.0), gt, none), UsageError);
  const std::vector<std::uint8_t> bad{0, 9, 0, 0};
  EXPECT_THROW(semantic_ce_loss(TD::constant({4, 5}, 0.0), bad, mask), DataError);
  Rng rng(2);
  auto logits = ad::random_tensor({4, 5}, rng, -3, 3);
  const std::vector<char> part{1, 0, 1, 1};
  expect_grad_ok(ad::gradcheck([&](const auto& in) { return semantic_ce_loss(in[0], gt, part); },
                               {logits}),
                 "ce");
}

TEST(RgbL1, ValuesAndGradcheck) {
  Rng rng(3);
  auto gt = ad::random_tensor({5, 3}, rng, 0, 1).detach();
  EXPECT_EQ(rgb_l1_loss(gt, gt).item(), 0.0);
  EXPECT_NEAR(rgb_l1_loss(ad::add_scalar(gt, 0.1), gt).item(), 0.1, 1e-12);
  auto pred = ad::random_tensor({5, 3}, rng, 0, 1);
  expect_grad_ok(ad::gradcheck([&](const auto& in) { return rgb_l1_loss(in[0], gt); }, {pred}),
                 "l1");
  // Subgradient 0 at a zero residual.
  auto same = TD::parameter({5, 3}, gt.values());
  rgb_l1_loss(same, gt).backward();
  for (double g : same.grad()) EXPECT_EQ(g, 0.0);
}

namespace {

RenderedFrame<double> frame_fixture(Rng& rng, std::size_t rays, std::size_t ds) {
  RenderedFrame<double> f;
  std::vector<double> packed(rays * (ds + 5));
  for (std::size_t r = 0; r < rays; ++r) {
    double* row = packed.data() + r * (ds + 5);
    row[0] = rng.uniform(1, 10);
    row[1] = r % 4 == 0 ? 0.01 : rng.uniform(0.2, 1.0);
    for (std::size_t k = 0; k < ds; ++k) row[2 + k] = rng.uniform(-2, 2);
    for (int k = 0; k < 3; ++k) row[2 + ds + k] = rng.uniform(0, 1);
    render::RayLabel l;
    if (r % 5 != 1) {
      l.depth = static_cast<float>(rng.uniform(1, 10));
      l.semantic = static_cast<std::uint8_t>(rng.uniform_int(0, static_cast<int>(ds) - 1));
      for (auto& c : l.rgb) c = static_cast<float>(rng.uniform(0, 1));
    }
    f.labels.push_back(l);
  }
  f.packed = TD::parameter({rays, ds + 5}, packed);
  return f;
}

/// Hand-built per-frame components following the documented masks.
double hand_frame(const RenderedFrame<double>& f, const LossWeights& w) {
  const auto rows = f.packed.dim(0), width = f.packed.dim(1), ds = width - 5;
  std::vector<double> g;
  double ce = 0, l1 = 0;
  int n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = f.packed.values().data() + r * width;
    const auto& l = f.labels[r];
    for (int k = 0; k < 3; ++k) l1 += std::abs(row[2 + ds + k] - l.rgb[k]);
    if (!(l.depth > 0) || row[1] < 0.05) continue;
    ++n;
    g.push_back(std::log(std::max(row[0], 1e-3)) - std::log(static_cast<double>(l.depth)));
    double mx = -1e300, z = 0;
    for (std::size_t k = 0; k < ds; ++k) mx = std::max(mx, row[2 + k]);
    for (std::size_t k = 0; k < ds; ++k) z += std::exp(row[2 + k] - mx);
    ce += -(row[2 + l.semantic] - mx - std::log(z));
  }
  double m1 = 0, m2 = 0;
  for (double x : g) {
    m1 += x / n;
    m2 += x * x / n;
  }
  return w.depth * std::sqrt(m2 - 0.85 * m1 * m1) + w.semantic * ce / n +
         w.rgb * l1 / (3.0 * rows);
}

}  // namespace

TEST(Temporal2D, SingleFrameAndHandSum) {
  Rng rng(4);
  LossWeights w;
  w.depth = 0.7;
  w.semantic = 1.3;
  w.rgb = 0.4;
  const auto f0 = frame_fixture(rng, 20, 4);
  const auto f1 = frame_fixture(rng, 16, 4);
  const auto one = temporal_2d_loss<double>({f0}, w);
  EXPECT_NEAR(one.total.item(), hand_frame(f0, w), 1e-12);
  const auto two = temporal_2d_loss<double>({f0, f1}, w);
  EXPECT_NEAR(two.total.item(), hand_frame(f0, w) + hand_frame(f1, w), 1e-12);
  EXPECT_EQ(two.depth.size(), 2u);
}

TEST(Temporal2D, WeightIsolationAndLinearity) {
  Rng rng(5);
  const auto f0 = frame_fixture(rng, 20, 3);
  const auto f1 = frame_fixture(rng, 20, 3);
  LossWeights zero{0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(temporal_2d_loss<double>({f0, f1}, zero).total.item(), 0.0);
  LossWeights rgb_only{0, 0, 1, 1, 1, 1, 1, 1};
  const auto r = temporal_2d_loss<double>({f0}, rgb_only);
  EXPECT_NEAR(r.total.item(), rgb_l1_loss(render::split_rendered(f0.packed).color,
                                          [&] {
                                            std::vector<double> v;
                                            for (const auto& l : f0.labels) {
                                              for (float c : l.rgb) v.push_back(c);
                                            }
                                            return TD::constant({20, 3}, v);
                                          }())
                                  .item(),
              1e-12);
  LossWeights a{1, 0, 0, 1, 1, 1, 1, 1}, b{2.5, 0, 0, 1, 1, 1, 1, 1};
  EXPECT_NEAR(temporal_2d_loss<double>({f0, f1}, b).total.item(),
              2.5 * temporal_2d_loss<double>({f0, f1}, a).total.item(), 1e-12);
}

TEST(Temporal2D, Gradcheck) {
  Rng rng(6);
  auto f0 = frame_fixture(rng, 8, 3);
  const auto labels = f0.labels;
  const auto res = ad::gradcheck(
      [&](const auto& in) {
        return temporal_2d_loss<double>({RenderedFrame<double>{in[0], labels}}, LossWeights{})
            .total;
      },
      {f0.packed});
  expect_grad_ok(res, "temporal");
}

TEST(Focal, LimitsAndCrossEntropyDegeneracy) {
  Rng rng(7);
  const auto gt = random_labels(rng, 27, 4);
  EXPECT_NEAR(focal_loss(one_hot_logits(gt, 4, 50.0), gt).item(), 0.0, 1e-12);
  auto logits = ad::random_tensor({27, 4}, rng, -2, 2);
  const std::vector<char> all(27, 1);
  EXPECT_EQ(focal_loss(logits, gt, 0.0).item(), semantic_ce_loss(logits, gt, all).item());
  for (double gamma : {0.0, 0.5, 2.0}) {
    expect_grad_ok(ad::gradcheck([&](const auto& in) { return focal_loss(in[0], gt, gamma); },
                                 {logits}),
                   "focal");
  }
}

TEST(Lovasz, PerfectPredictionIsZero) {
  Rng rng(8);
  const auto gt = random_labels(rng, 27, 5);
  EXPECT_NEAR(lovasz_softmax_loss(one_hot_probs(gt, 5), gt).item(), 0.0, 1e-12);
}

TEST(Lovasz, TinyInstanceMatchesDefinition) {
  const std::vector<std::uint8_t> gt{0, 1};
  const std::vector<double> p{0.6, 0.4, 0.6, 0.4};
  const double got = lovasz_softmax_loss(TD::constant({2, 2}, p), gt).item();
  EXPECT_NEAR(got, lovasz_bruteforce(p, 2, gt), 1e-12);
  // Category 0: sorted errors (0.6 bg, 0.4 fg), Jaccard losses 1/2 then 1,
  // giving 0.5. Category 1: (0.6 fg, 0.4 bg), Jaccard losses 1 then 1,
  // giving 0.6.
  EXPECT_NEAR(got, 0.55, 1e-12);
}

TEST(Lovasz, RandomMatchesDefinitionAndHardJaccard) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t v = 12, c = 4;
    const auto gt = random_labels(rng, v, static_cast<int>(c));
    auto probs = ad::softmax_rows(ad::random_tensor({v, c}, rng, -2, 2));
    EXPECT_NEAR(lovasz_softmax_loss(probs, gt).item(), lovasz_bruteforce(probs.values(), c, gt),
                1e-12);
    // Hard predictions: mean over present categories of 1 - IoU.
    const auto pred = random_labels(rng, v, static_cast<int>(c));
    double want = 0;
    int present = 0;
    for (std::size_t k = 0; k < c; ++k) {
      int inter = 0, uni = 0, in_gt = 0;
      for (std::size_t i = 0; i < v; ++i) {
        in_gt += gt[i] == k;
        inter += gt[i] == k && pred[i] == k;
        uni += gt[i] == k || pred[i] == k;
      }
      if (!in_gt) continue;
      ++present;
      want += 1.0 - static_cast<double>(inter) / uni;
    }
    EXPECT_NEAR(lovasz_softmax_loss(one_hot_probs(pred, c), gt).item(), want / present, 1e-6);
  }
}

TEST(Lovasz, MonotoneInTrueClassProbability) {
  Rng rng(10);
  const std::size_t v = 10, c = 3;
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = random_labels(rng, v, static_cast<int>(c));
    auto probs = ad::softmax_rows(ad::random_tensor({v, c}, rng, -2, 2)).values();
    const double before = lovasz_softmax_loss(TD::constant({v, c}, probs), gt).item();
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(v) - 1));
    probs[i * c + gt[i]] = std::min(1.0, probs[i * c + gt[i]] + rng.uniform(0.01, 0.5));
    const double after = lovasz_softmax_loss(TD::constant({v, c}, probs), gt).item();
    EXPECT_LE(after, before + 1e-12);
  }
}

TEST(Lovasz, Gradcheck) {
  Rng rng(11);
  const auto gt = random_labels(rng, 8, 3);
  auto probs = ad::random_tensor({8, 3}, rng, 0.05, 0.95);
  expect_grad_ok(
      ad::gradcheck([&](const auto& in) { return lovasz_softmax_loss(in[0], gt); }, {probs}),
      "lovasz");
}

TEST(Affinity, PerfectPredictionsAndDegenerateGeo) {
  Rng rng(12);
  const auto gt = random_labels(rng, 27, 5);
  const auto a = scene_class_affinity_losses(one_hot_probs(gt, 5), gt);
  EXPECT_NEAR(a.sem.item(), 0.0, 1e-12);
  EXPECT_NEAR(a.geo.item(), 0.0, 1e-12);
  const std::vector<std::uint8_t> all_free(27, 4);
  const auto f = scene_class_affinity_losses(one_hot_probs(all_free, 5), all_free);
  EXPECT_NEAR(f.geo.item(), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(f.sem.item()));
}

TEST(Affinity, MatchesLiteralTranscription) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = 27, c = 5;
    const auto gt = random_labels(rng, v, static_cast<int>(c));
    auto probs = ad::softmax_rows(ad::random_tensor({v, c}, rng, -2, 2));
    const auto got = scene_class_affinity_losses(probs, gt);
    const auto want = affinity_literal(probs.values(), c, gt);
    EXPECT_NEAR(got.sem.item(), want.first, 1e-9);
    EXPECT_NEAR(got.geo.item(), want.second, 1e-9);
  }
}

TEST(Affinity, Gradcheck) {
  Rng rng(14);
  const auto gt = random_labels(rng, 12, 4);
  auto logits = ad::random_tensor({12, 4}, rng, -2, 2);
  expect_grad_ok(ad::gradcheck(
                     [&](const auto& in) {
                       const auto a = scene_class_affinity_losses(ad::softmax_rows(in[0]), gt);
                       return ad::add(a.sem, ad::scale(a.geo, 0.7));
                     },
                     {logits}),
                 "affinity");
}

TEST(Occupancy3D, WeightsAndComponents) {
  Rng rng(15);
  const auto gt = random_labels(rng, 27, 5);
  auto logits = ad::random_tensor({27, 5}, rng, -2, 2);
  LossWeights zero{0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(occupancy_3d_loss(logits, gt, zero).total.item(), 0.0);
  LossWeights w;
  w.focal = 0.5;
  w.lovasz = 2.0;
  w.scal_sem = 0.25;
  w.scal_geo = 3.0;
  const auto l = occupancy_3d_loss(logits, gt, w);
  const auto probs = ad::softmax_rows(logits);
  const auto aff = scene_class_affinity_losses(probs, gt);
  const double want = 0.5 * focal_loss(logits, gt).item() +
                      2.0 * lovasz_softmax_loss(probs, gt).item() + 0.25 * aff.sem.item() +
                      3.0 * aff.geo.item();
  EXPECT_NEAR(l.total.item(), want, 1e-12);
  EXPECT_TRUE(std::isfinite(l.total.item()));
  auto big = ad::random_tensor({27, 5}, rng, -80, 80);
  EXPECT_TRUE(std::isfinite(occupancy_3d_loss(big, gt, LossWeights{}).total.item()));
  const auto perfect = occupancy_3d_loss(one_hot_logits(gt, 5, 60.0), gt, LossWeights{});
  EXPECT_NEAR(perfect.total.item(), 0.0, 1e-6);
}

TEST(Occupancy3D, Gradcheck) {
  Rng rng(16);
  const auto gt = random_labels(rng, 8, 3);
  auto logits = ad::random_tensor({8, 3}, rng, -2, 2);
  expect_grad_ok(ad::gradcheck(
                     [&](const auto& in) {
                       return occupancy_3d_loss(in[0], gt, LossWeights{}).total;
                     },
                     {logits}),
                 "occ3d");
}

TEST(TrajectoryL2, ValuesErrorsGradcheck) {
  const std::vector<Vec2> gt{{1, 0}, {2, 0.5}, {3, 1}};
  auto exact = TD::constant({1, 6}, {1, 0, 2, 0.5, 3, 1});
  EXPECT_EQ(trajectory_l2_loss(exact, gt).item(), 0.0);
  auto shifted = TD::constant({1, 6}, {1, 1, 2, 1.5, 3, 2});
  EXPECT_NEAR(trajectory_l2_loss(shifted, gt).item(), 1.0, 1e-12);
  EXPECT_THROW(trajectory_l2_loss(TD::constant({1, 4}, 0.0), gt), ShapeError);
  Rng rng(17);
  auto pred = ad::random_tensor({1, 6}, rng, -3, 3);
  expect_grad_ok(
      ad::gradcheck([&](const auto& in) { return trajectory_l2_loss(in[0], gt); }, {pred}),
      "traj");
}

TEST(LossLog, AppendsCsvRows) {
  const auto path = std::filesystem::temp_directory_path() / "occworld_losslog_test.csv";
  std::filesystem::remove(path);
  {
    LossLog log(path);
    log.append(1, "pretrain", "rgb", 0.5);
    log.append(2, "finetune", "focal", 0.25);
  }
  std::ifstream in(path);
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(header, "step,stage,component,value");
  EXPECT_EQ(a, "1,pretrain,rgb,0.5");
  EXPECT_EQ(b, "2,finetune,focal,0.25");
  std::filesystem::remove(path);
}
