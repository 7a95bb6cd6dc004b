// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "occworld/pipeline/eval.hpp"
#include "occworld/pipeline/train.hpp"
#include "occworld/pipeline/visualize.hpp"

namespace occworld::pipeline {

/// Scene directories of a set: `root` itself when it holds a scene, else its
/// scene subdirectories in name order.
inline std::vector<std::filesystem::path> scene_dirs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (fs::exists(root / "scene.json")) return {root};
  if (!fs::is_directory(root)) throw DataError("scene set " + root.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "scene.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no scene directories under " + root.string());
  return out;
}

inline std::vector<SceneData> load_scenes(const std::vector<std::filesystem::path>& dirs,
                                          scene::LoadOptions opt) {
  std::vector<SceneData> out;
  for (const auto& d : dirs) {
    out.push_back(prepare_scene(scene::load_scene(d, opt), d.filename().string()));
  }
  return out;
}

struct Split {
  std::vector<std::size_t> train, val;
};

/// Seeded permutation; the last `val_count` indices (sorted) are held out.
/// With a single scene it serves as both train and val.
inline Split split_scenes(std::size_t n, int val_count, std::uint64_t seed) {
  if (n == 0) throw DataError("empty scene set");
  Split s;
  if (n == 1 || val_count == 0) {
    s.train.resize(n);
    std::iota(s.train.begin(), s.train.end(), 0);
    s.val = s.train;
    return s;
  }
  if (static_cast<std::size_t>(val_count) >= n) {
    throw UsageError(detail::concat("cannot hold out ", val_count, " of ", n, " scenes"));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(Rng::mix(seed ^ 0x5B117ULL));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_u64() % i]);
  const auto cut = n - static_cast<std::size_t>(val_count);
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(cut));
  s.val.assign(idx.begin() + static_cast<long>(cut), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

template <typename V>
std::vector<V> pick(const std::vector<V>& all, const std::vector<std::size_t>& idx) {
  std::vector<V> out;
  for (auto i : idx) out.push_back(all.at(i));
  return out;
}

struct ExperimentOptions {
  /// Bird's-eye PPMs of the first validation anchor, prediction and truth.
  bool write_ppm = false;
  /// Warm start from this checkpoint instead of fresh initialization.
  std::filesystem::path init;
};

struct ExperimentResult {
  EvalBundle eval;
  std::vector<StageReport> stages;
  Split split;
};

/// Category count of a scene set, read from the first manifest.
inline int scene_set_categories(const std::vector<std::filesystem::path>& dirs) {
  return scene::load_scene(dirs.at(0), {.grids = false, .images = false, .supervision = false})
      .spec.num_categories;
}

/// Runs the configured stages on the training split, evaluates on the
/// validation split and writes `config.json`, `split.json`, `loss.csv`,
/// checkpoints, `eval.json` and `eval.csv` (plus PPMs on request) to
/// `out`. Pre-training runs when `pretrain_epochs > 0`; fine-tuning (or joint
/// training) follows unless the stage is `pretrain`. Pre-training only
/// models are evaluated in self-supervised mode. On failure the loss log is
/// flushed and the current weights are saved as `partial.ckpt`.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const std::filesystem::path& scenes,
                                       const std::filesystem::path& out,
                                       const ExperimentOptions& opt = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  const auto dirs = scene_dirs(scenes);
  ExperimentResult res;
  res.split = split_scenes(dirs.size(), cfg.val_scenes, cfg.seed);
  const auto train_dirs = pick(dirs, res.split.train), val_dirs = pick(dirs, res.split.val);

  fs::create_directories(out);
  save_config(cfg, out / "config.json");
  {
    Json sj = {{"train", Json::array()}, {"val", Json::array()}};
    for (const auto& d : train_dirs) sj["train"].push_back(d.filename().string());
    for (const auto& d : val_dirs) sj["val"].push_back(d.filename().string());
    std::ofstream(out / "split.json") << sj.dump(2) << '\n';
  }
  fs::remove(out / "loss.csv");
  losses::LossLog log(out / "loss.csv");

  Model<Real> model(cfg, scene_set_categories(dirs));
  if (!opt.init.empty()) model.load(nets::load_checkpoint(opt.init));
  std::size_t step = 0;
  try {
    if (cfg.pretrain_epochs > 0) {
      const auto train = load_scenes(train_dirs, stage_load_options(Stage::pretrain));
      nets::Adam<Real> adam(model.params(), adam_config(cfg));
      res.stages.push_back(train_stage(model, adam, train, Stage::pretrain, cfg.pretrain_epochs,
                                       cfg, &log, &step));
      nets::save_checkpoint(out / "pretrain.ckpt", model.checkpoint(&adam));
    }
    if (cfg.stage != Stage::pretrain && cfg.finetune_epochs > 0) {
      const auto train = load_scenes(train_dirs, stage_load_options(cfg.stage));
      nets::Adam<Real> adam(model.params(), adam_config(cfg));
      res.stages.push_back(
          train_stage(model, adam, train, cfg.stage, cfg.finetune_epochs, cfg, &log, &step));
    }
  } catch (...) {
    log.flush();
    nets::save_checkpoint(out / "partial.ckpt", model.checkpoint());
    throw;
  }
  nets::save_checkpoint(out / "model.ckpt", model.checkpoint());

  const auto val = load_scenes(val_dirs, {});
  EvalOptions eo;
  eo.selfsup = cfg.stage == Stage::pretrain;
  eo.tau = cfg.density_threshold;
  res.eval = evaluate(model, val, cfg, eo);
  write_eval(res.eval, out / "eval.json", out / "eval.csv");

  if (opt.write_ppm) {
    const auto& d = val.front();
    const int t = anchor_frames(d.scene, cfg, 1).at(0);
    const auto pred = predict_sequence(model, d, t, cfg.future_frames, eo);
    for (std::size_t h = 0; h < pred.size(); ++h) {
      const auto tag = "_t" + std::to_string(t) + "_h" + std::to_string(h) + ".ppm";
      write_ppm(out / "renders" / ("pred" + tag), birds_eye(pred[h], d.scene.taxonomy));
      write_ppm(out / "renders" / ("gt" + tag),
                birds_eye(d.scene.grid(t + static_cast<int>(h)), d.scene.taxonomy));
    }
  }
  return res;
}

}  // namespace occworld::pipeline
