// SPDX-License-Identifier: Apache-2.0
// Command-line front end: scene generation and baking, the training stages,
// evaluation, forecasting and rendering.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "occworld/pipeline/experiment.hpp"
#include "occworld/scene/generate.hpp"

namespace fs = std::filesystem;
using namespace occworld;
using namespace occworld::pipeline;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

Json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw UsageError("cannot open " + p.string());
  try {
    return Json::parse(is, nullptr, true, true);
  } catch (const Json::exception& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------------ gen

struct GenArgs {
  fs::path spec, out;
  int count = 1;
  std::vector<double> speed_range;
  std::vector<std::string> profiles;
  bool bake = false;
};

void cmd_gen(const GenArgs& a) {
  scene::SceneSpec base;
  try {
    base = scene::spec_from_json(read_json(a.spec));
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (a.count < 1) throw UsageError("--count must be >= 1");
  if (!a.speed_range.empty() && a.speed_range.size() != 2) {
    throw UsageError("--speed-range takes MIN MAX");
  }
  for (int i = 0; i < a.count; ++i) {
    auto spec = base;
    spec.seed = base.seed + static_cast<std::uint64_t>(i);
    if (a.speed_range.size() == 2) {
      const double t = a.count > 1 ? static_cast<double>(i) / (a.count - 1) : 0.0;
      spec.ego.speed = a.speed_range[0] + t * (a.speed_range[1] - a.speed_range[0]);
    }
    if (!a.profiles.empty()) {
      try {
        spec.ego.profile =
            scene::detail_io::profile_from(a.profiles[static_cast<std::size_t>(i) % a.profiles.size()]);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
    }
    auto s = scene::generate(spec);
    if (a.bake) s = scene::bake_labels(s);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", i);
    const auto dir = a.count == 1 ? a.out : a.out / name;
    scene::save_scene(s, dir);
    std::cout << "wrote " << dir.string() << " (" << s.frame_count() << " frames"
              << (a.bake ? ", baked" : "") << ")\n";
  }
}

// ------------------------------------------------------------------ bake

void cmd_bake(const fs::path& dir) {
  for (const auto& d : scene_dirs(dir)) {
    auto s = scene::load_scene(d, {.grids = true, .images = false, .supervision = false});
    scene::save_scene(scene::bake_labels(s), d);
    std::cout << "baked " << d.string() << " (" << s.frame_count() << " frames x "
              << s.camera_count() << " cameras)\n";
  }
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  fs::path config, scenes, out, init, log;
};

void cmd_train(Stage stage, const TrainArgs& a) {
  auto cfg = load_config(a.config);
  cfg.stage = stage;
  const int epochs = stage == Stage::pretrain ? cfg.pretrain_epochs : cfg.finetune_epochs;
  const auto dirs = scene_dirs(a.scenes);
  const auto set = load_scenes(dirs, stage_load_options(stage));
  Model<Real> model(cfg, set.front().scene.spec.num_categories);
  if (!a.init.empty()) model.load(nets::load_checkpoint(a.init));
  nets::Adam<Real> adam(model.params(), adam_config(cfg));
  losses::LossLog log;
  if (!a.log.empty()) log = losses::LossLog(a.log);
  StageReport rep;
  try {
    rep = train_stage(model, adam, set, stage, epochs, cfg, a.log.empty() ? nullptr : &log);
  } catch (...) {
    log.flush();
    auto partial = a.out;
    partial += ".partial";
    nets::save_checkpoint(partial, model.checkpoint(&adam));
    throw;
  }
  nets::save_checkpoint(a.out, model.checkpoint(&adam));
  std::cout << stage_name(stage) << ": " << rep.steps << " steps over " << set.size()
            << " scenes";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
    std::cout << (e ? ", " : "; epoch loss ") << rep.epoch_loss[e];
  }
  std::cout << "\nwrote " << a.out.string() << '\n';
}

// ------------------------------------------------------------------ run

void cmd_run(const fs::path& config, const fs::path& scenes, const fs::path& out, bool ppm,
             const fs::path& init) {
  const auto res = run_experiment(load_config(config), scenes, out, {.write_ppm = ppm, .init = init});
  std::cout << eval_to_json(res.eval).dump(2) << '\n';
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  fs::path ckpt, scenes, report, csv;
  bool selfsup = false;
  double tau = 0;
};

void cmd_eval(const EvalArgs& a) {
  const auto ckpt = nets::load_checkpoint(a.ckpt);
  const auto cfg = checkpoint_meta(ckpt).config;
  const auto model = model_from_checkpoint(ckpt);
  const auto set = load_scenes(scene_dirs(a.scenes), {});
  EvalOptions opt;
  opt.selfsup = a.selfsup;
  opt.tau = a.tau > 0 ? a.tau : cfg.density_threshold;
  const auto b = evaluate(model, set, cfg, opt);
  write_eval(b, a.report, a.csv);
  std::cout << "mIoU (current) " << b.horizons[0].miou << ", IoU " << b.horizons[0].iou_geo
            << ", samples " << b.samples << "\nwrote " << a.report.string() << '\n';
}

// ------------------------------------------------------------------ forecast

struct ForecastArgs {
  fs::path ckpt, scene, out = "forecast";
  int frame = 0, horizon = 1;
  bool ppm = false, selfsup = false;
};

void cmd_forecast(const ForecastArgs& a) {
  const auto model = load_model(a.ckpt);
  const auto d = prepare_scene(scene::load_scene(a.scene, {.grids = true, .images = true,
                                                           .supervision = false}),
                               a.scene.filename().string());
  check_scene(d, model.config(), model.num_categories());
  if (a.horizon < 0) throw UsageError("--horizon must be >= 0");
  if (a.frame < 0 || a.frame + a.horizon >= d.scene.frame_count()) {
    throw UsageError(detail::concat("frames ", a.frame, "..", a.frame + a.horizon,
                                    " exceed the ", d.scene.frame_count(), "-frame sequence"));
  }
  EvalOptions opt;
  opt.selfsup = a.selfsup;
  opt.tau = model.config().density_threshold;
  const auto pred = predict_sequence(model, d, a.frame, a.horizon, opt);
  const auto paste = metrics::copy_paste_baseline(pred[0], std::max(1, a.horizon));
  for (std::size_t h = 0; h < pred.size(); ++h) {
    const int t = a.frame + static_cast<int>(h);
    std::cout << "step " << h << " (frame " << t << "): " << pred[h].occupied_count()
              << " occupied voxels";
    if (d.scene.frames[static_cast<std::size_t>(t)].grid) {
      const auto& gt = d.scene.grid(t);
      std::cout << ", mIoU " << metrics::miou(pred[h], gt).miou;
      if (h > 0) std::cout << ", copy-paste mIoU " << metrics::miou(paste[h - 1], gt).miou;
    }
    std::cout << '\n';
    if (a.ppm) {
      const auto tag = "_f" + std::to_string(t) + ".ppm";
      write_ppm(a.out / ("pred" + tag), birds_eye(pred[h], d.scene.taxonomy));
      if (d.scene.frames[static_cast<std::size_t>(t)].grid) {
        write_ppm(a.out / ("gt" + tag), birds_eye(d.scene.grid(t), d.scene.taxonomy));
      }
    }
  }
  if (a.ppm) std::cout << "wrote PPMs to " << a.out.string() << '\n';
}

// ------------------------------------------------------------------ render

struct RenderArgs {
  fs::path ckpt, scene, out = "render";
  int frame = 0, camera = 0;
  std::uint32_t stride = 1;
};

void cmd_render(const RenderArgs& a) {
  const auto model = load_model(a.ckpt);
  const auto d = prepare_scene(scene::load_scene(a.scene, {.grids = false, .images = true,
                                                           .supervision = false}),
                               a.scene.filename().string());
  check_scene(d, model.config(), model.num_categories());
  if (a.frame < 0 || a.frame >= d.scene.frame_count()) throw UsageError("--frame out of range");
  if (a.camera < 0 || a.camera >= d.scene.camera_count()) throw UsageError("--camera out of range");
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  const auto fields = model.projection()(encode_frame(model, d, a.frame));
  const auto& cam = d.scene.rig[static_cast<std::size_t>(a.camera)];
  const auto bounds = render::RayBounds::for_grid(d.scene.geometry());
  const auto rays = render::pixel_rays(cam, a.stride, bounds, a.frame, a.camera);
  render::RayBundle bundle{rays, {}};
  const auto px = render::render_bundle(fields, bundle, model.config().samples_per_ray);
  const auto im = camera_images(px, rays, cam.width(), cam.height(), a.stride, d.scene.taxonomy,
                                bounds.t_far);
  const auto tag = "_f" + std::to_string(a.frame) + "_cam" + std::to_string(a.camera) + ".ppm";
  write_ppm(a.out / ("color" + tag), im.color);
  write_ppm(a.out / ("depth" + tag), im.depth);
  write_ppm(a.out / ("semantic" + tag), im.semantic);
  std::cout << "wrote color, depth and semantic PPMs to " << a.out.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occupancy world model: scenes, training, evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate synthetic scenes from a spec");
  g->add_option("--spec", gen.spec, "scene spec JSON")->required()->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "output scene directory")->required();
  g->add_option("--count", gen.count, "number of scenes (seeds spec.seed + i)");
  g->add_option("--speed-range", gen.speed_range, "ego speeds spread over the set")->expected(2);
  g->add_option("--profiles", gen.profiles, "ego motion profiles cycled over the set")
      ->delimiter(',');
  g->add_flag("--bake", gen.bake, "bake camera labels right away");

  fs::path bake_dir;
  auto* b = app.add_subcommand("bake", "bake camera labels of a scene or scene set");
  b->add_option("--scene", bake_dir, "scene directory or set")->required();

  TrainArgs train;
  std::vector<std::pair<CLI::App*, Stage>> stages;
  for (auto [name, stage] : {std::pair{"pretrain", Stage::pretrain},
                             std::pair{"finetune", Stage::finetune}, std::pair{"joint", Stage::joint}}) {
    auto* s = app.add_subcommand(name, std::string("run the ") + name + " stage on a scene set");
    s->add_option("--config", train.config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--scenes", train.scenes, "scene directory or set")->required();
    s->add_option("--out", train.out, "output checkpoint")->required();
    s->add_option("--init", train.init, "warm-start checkpoint")->check(CLI::ExistingFile);
    s->add_option("--log", train.log, "loss CSV");
    stages.push_back({s, stage});
  }

  fs::path run_config, run_scenes, run_out, run_init;
  bool run_ppm = false;
  auto* r = app.add_subcommand("run", "train, evaluate and write all artifacts");
  r->add_option("--config", run_config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  r->add_option("--scenes", run_scenes, "scene set")->required();
  r->add_option("--out", run_out, "output directory")->required();
  r->add_option("--init", run_init, "warm-start checkpoint")->check(CLI::ExistingFile);
  r->add_flag("--dump-ppm", run_ppm, "write bird's-eye PPMs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--scenes", ev.scenes, "scene directory or set")->required();
  e->add_option("--report", ev.report, "JSON report path")->required();
  e->add_option("--csv", ev.csv, "CSV report path");
  e->add_flag("--selfsup", ev.selfsup, "density-threshold extraction instead of the occupancy head");
  e->add_option("--tau", ev.tau, "density threshold (default: from the checkpoint config)")
      ->check(CLI::PositiveNumber);

  ForecastArgs fc;
  auto* f = app.add_subcommand("forecast", "forecast future occupancy from one frame");
  f->add_option("--ckpt", fc.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  f->add_option("--scene", fc.scene, "scene directory")->required();
  f->add_option("--frame", fc.frame, "anchor frame T")->required();
  f->add_option("--horizon", fc.horizon, "future frames f")->required();
  f->add_option("--out", fc.out, "PPM output directory");
  f->add_flag("--dump-ppm", fc.ppm, "write bird's-eye PPMs");
  f->add_flag("--selfsup", fc.selfsup, "density-threshold extraction");

  RenderArgs rd;
  auto* v = app.add_subcommand("render", "render attribute fields into one camera");
  v->add_option("--ckpt", rd.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  v->add_option("--scene", rd.scene, "scene directory")->required();
  v->add_option("--frame", rd.frame, "frame")->required();
  v->add_option("--camera", rd.camera, "camera index")->required();
  v->add_option("--stride", rd.stride, "pixel stride");
  v->add_option("--out", rd.out, "PPM output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*g) cmd_gen(gen);
    if (*b) cmd_bake(bake_dir);
    for (const auto& [sub, stage] : stages) {
      if (*sub) cmd_train(stage, train);
    }
    if (*r) cmd_run(run_config, run_scenes, run_out, run_ppm, run_init);
    if (*e) cmd_eval(ev);
    if (*f) cmd_forecast(fc);
    if (*v) cmd_render(rd);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& ex) {
    std::cerr << "numeric failure: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& ex) {
    std::cerr << "data error: " << ex.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
