#include "ctsn/cli.hpp"

#include "ctsn/datagen.hpp"
#include "ctsn/errors.hpp"
#include "ctsn/gradcheck.hpp"
#include "ctsn/kernels.hpp"
#include "ctsn/postprocess.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace ctsn::cli {

namespace fs = std::filesystem;

namespace {

struct GenDataArgs {
  std::string kind = "tube-skirt-biped";
  std::size_t poses = 64;
  std::size_t resolution = 12;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string dataset, checkpoint, out;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t epochs = 500, batch = 4, m = 32, k = 128;
  double lambda = 0.5;
  int smooth_iters = 20;
  bool all_clips = false;
  bool quiet = false;
};

struct PredictArgs {
  std::string dataset, asset, checkpoint, out;
  std::vector<std::string> poses;
  bool resolve = false;
};

struct EvalArgs {
  std::string pred, gt, dataset, checkpoint, out, split = "test";
  bool resolve = false;
};

struct BenchArgs {
  std::string checkpoint, asset;
  std::size_t reps = 20, resolution = 55;
  std::uint64_t seed = 0;
};

struct GradCheckArgs {
  std::string asset = "tiny";
  std::uint64_t seed = 0;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Mesh posed_body(const RigAsset& asset, const Pose& pose) {
  return asset.body.with_vertices(lbs_skin(asset.body.vertices(), pose, asset.body_weights));
}

void check_compatible(const Model& model, const RigAsset& asset) {
  if (model.config.joints != asset.skeleton.joint_count() ||
      model.config.cloth_vertices != asset.cloth.vertex_count())
    throw ValidationError("checkpoint was trained for " + std::to_string(model.config.cloth_vertices) +
                          " cloth vertices / " + std::to_string(model.config.joints) + " joints; asset has " +
                          std::to_string(asset.cloth.vertex_count()) + " / " +
                          std::to_string(asset.skeleton.joint_count()));
}

int cmd_gen_data(const GenDataArgs& a) {
  const ClothAsset asset = make_asset(parse_asset_kind(a.kind), a.resolution, a.seed);
  const Dataset d = generate_dataset(asset, a.poses, a.seed, SimParams{}, a.resolution);
  save_dataset(d, a.out);
  std::cout << "wrote " << d.sample_count() << " samples in " << d.clips.size() << " clips to " << a.out << '\n';
  if (const auto n = d.meta["unconverged"].size(); n > 0)
    std::cerr << "warning: " << n << " frames stopped above the force tolerance (listed in meta.json)\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const Dataset full = load_dataset(a.dataset);
  Dataset train_set, test_set;
  if (a.all_clips || full.clips.size() < 2) {
    train_set = full;
  } else {
    std::tie(train_set, test_set) = split_dataset(full);
  }
  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.batch = a.batch;
  cfg.epochs_a = cfg.epochs_b = a.epochs;
  cfg.seed = a.seed;
  cfg.smooth_lambda = a.lambda;
  cfg.smooth_iters = a.smooth_iters;
  cfg.network.m = a.m;
  cfg.network.k = a.k;
  const bool quiet = a.quiet;
  const auto result = train(train_set, cfg, [quiet](const EpochLog& e) {
    if (!quiet && (e.epoch % 50 == 0 || e.epoch == 1 || e.stage == "final"))
      std::cerr << "stage " << e.stage << " epoch " << e.epoch << " loss " << fmt(e.loss) << '\n';
  });
  save_model(result.model, a.checkpoint);
  const fs::path log = a.out.empty() ? fs::path(a.checkpoint + ".csv") : fs::path(a.out);
  write_log_csv(result.log, log);
  std::cout << "train loss " << fmt(result.final_loss) << " (baseline " << fmt(result.baseline_a) << " smoothed, "
            << fmt(result.baseline_b) << " after stage A)";
  if (!test_set.clips.empty()) std::cout << ", test loss " << fmt(dataset_loss(test_set, result.model));
  std::cout << "\ncheckpoint " << a.checkpoint << ", log " << log.string() << '\n';
  return 0;
}

std::string pose_stem(const fs::path& p) {
  std::string name = p.filename().string();
  const std::string suffix = ".pose.json";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
    return name.substr(0, name.size() - suffix.size());
  return p.stem().string();
}

int cmd_predict(const PredictArgs& a) {
  const Model model = load_model(a.checkpoint);
  std::vector<std::pair<fs::path, Pose>> jobs;
  RigAsset asset;
  if (!a.dataset.empty()) {
    const Dataset d = load_dataset(a.dataset);
    asset = d.asset;
    for (const auto& c : d.clips)
      for (std::size_t f = 0; f < c.samples.size(); ++f) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "frame_%03zu", f);
        jobs.emplace_back(fs::path(c.name) / (std::string(stem) + ".pred.obj"), c.samples[f].pose);
      }
  } else {
    if (a.asset.empty()) throw ValidationError("predict needs --dataset or --asset");
    asset = load_rig(a.asset);
    for (const auto& p : a.poses) jobs.emplace_back(pose_stem(p) + ".pred.obj", load_pose(p));
  }
  check_compatible(model, asset);
  const Predictor predictor(asset, model);
  const double eps = default_resolve_epsilon(asset.body);
  for (const auto& [rel, pose] : jobs) {
    Mesh pred = predictor.predict(pose);
    if (a.resolve) pred = resolve_penetrations(pred, posed_body(asset, pose), eps).cloth;
    const fs::path out = fs::path(a.out) / rel;
    fs::create_directories(out.parent_path());
    save_obj(pred, out);
  }
  std::cout << "wrote " << jobs.size() << " predictions to " << a.out << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  std::ostringstream csv;
  csv << "sample,E_dist_m,E_norm_deg,penetrated_before,penetrated_after\n";
  if (!a.pred.empty() || !a.gt.empty()) {
    if (a.pred.empty() || a.gt.empty()) throw ValidationError("eval needs both --pred and --gt");
    const auto m = eval_metrics(load_obj(a.pred), load_obj(a.gt));
    csv << fs::path(a.pred).filename().string() << ',' << fmt(m.e_dist) << ',' << fmt(m.e_norm) << ",,\n";
  } else {
    if (a.dataset.empty() || a.checkpoint.empty())
      throw ValidationError("eval needs --pred/--gt or --dataset with --checkpoint");
    const Dataset full = load_dataset(a.dataset);
    Dataset subset = full;
    if (a.split != "all") {
      if (a.split != "test" && a.split != "train") throw ValidationError("--split must be train, test or all");
      auto parts = split_dataset(full);
      subset = a.split == "test" ? parts.second : parts.first;
    }
    const Model model = load_model(a.checkpoint);
    check_compatible(model, subset.asset);
    const Predictor predictor(subset.asset, model);
    const double eps = default_resolve_epsilon(subset.asset.body);
    double sum_dist = 0.0, sum_norm = 0.0;
    std::size_t n = 0;
    for (const auto& c : subset.clips)
      for (std::size_t f = 0; f < c.samples.size(); ++f) {
        const auto& s = c.samples[f];
        Mesh pred = predictor.predict(s.pose);
        const Mesh body = posed_body(subset.asset, s.pose);
        const std::size_t before = detect_penetrations(pred, body).size();
        std::size_t after = before;
        if (a.resolve) {
          auto r = resolve_penetrations(pred, body, eps);
          pred = std::move(r.cloth);
          after = r.remaining();
        }
        const auto m = eval_metrics(pred, s.gt);
        csv << c.name << '/' << f << ',' << fmt(m.e_dist) << ',' << fmt(m.e_norm) << ',' << before << ','
            << after << '\n';
        sum_dist += m.e_dist;
        sum_norm += m.e_norm;
        ++n;
      }
    std::cerr << "mean E_dist " << fmt(sum_dist / static_cast<double>(n)) << " m, mean E_norm "
              << fmt(sum_norm / static_cast<double>(n)) << " deg over " << n << " samples\n";
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(a.out);
    if (!out) throw IoError("cannot write " + a.out);
    out << csv.str();
  }
  return 0;
}

int cmd_bench(const BenchArgs& a) {
  RigAsset asset;
  Model model;
  if (!a.checkpoint.empty()) {
    if (a.asset.empty()) throw ValidationError("bench with --checkpoint also needs --asset");
    asset = load_rig(a.asset);
    model = load_model(a.checkpoint);
    check_compatible(model, asset);
  } else {
    asset = make_asset(AssetKind::TubeSkirtBiped, a.resolution, a.seed).rig;
    NetworkConfig cfg;
    cfg.joints = asset.skeleton.joint_count();
    cfg.cloth_vertices = asset.cloth.vertex_count();
    model = init_model(cfg, a.seed);
  }
  if (a.reps < 1) throw ValidationError("--reps must be >= 1");
  const Predictor predictor(asset, model);
  const Pose pose = Pose::identity(asset.skeleton.joint_count());
  (void)predictor.predict(pose);  // warm-up
  std::vector<double> ms;
  for (std::size_t r = 0; r < a.reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const Mesh m = predictor.predict(pose);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double mean = 0.0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(ms.size());
  std::cout << "cloth_vertices " << asset.cloth.vertex_count() << ", threads " << kernels::max_threads()
            << ", reps " << a.reps << '\n'
            << "latency_ms mean " << fmt(mean) << " min " << fmt(*std::min_element(ms.begin(), ms.end()))
            << " max " << fmt(*std::max_element(ms.begin(), ms.end())) << '\n';
  return 0;
}

int cmd_grad_check(const GradCheckArgs& a) {
  if (a.asset != "tiny") throw ValidationError("grad-check supports --asset tiny only");
  const auto r = tiny_grad_check(a.seed);
  for (const auto& g : r.groups)
    std::cout << g.group << " (" << g.scalars << " scalars): max rel error " << fmt(g.max_rel_error) << '\n';
  std::cout << "instance seed " << r.instance_seed << ", kink margin " << fmt(r.kink_margin) << '\n';
  std::cout << "max relative gradient error " << fmt(r.max_rel_error) << '\n';
  if (r.max_rel_error >= 1e-4) {
    std::cerr << "gradient check failed at " << r.worst << '\n';
    return kExitCheckFailed;
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  kernels::apply_thread_cap();
  CLI::App app{"Two-stream cloth skinning network"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a dataset with the relaxation oracle");
  g->add_option("--kind", gen.kind, "arm-cape, tube-skirt-biped or quad-blanket")->capture_default_str();
  g->add_option("--poses", gen.poses, "Number of poses (clips of 16)")->capture_default_str();
  g->add_option("--resolution", gen.resolution, "Cloth grid resolution")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen.out, "Output dataset directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Two-stage training");
  t->add_option("--dataset", tr.dataset)->required();
  t->add_option("--checkpoint", tr.checkpoint, "Output checkpoint")->required();
  t->add_option("--out", tr.out, "Loss log CSV (default <checkpoint>.csv)");
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Epochs per stage")->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--m", tr.m, "Skeleton basis count")->capture_default_str();
  t->add_option("--k", tr.k, "Mesh basis count")->capture_default_str();
  t->add_option("--lambda", tr.lambda, "Smoothing factor for the low-frequency targets")->capture_default_str();
  t->add_option("--smooth-iters", tr.smooth_iters)->capture_default_str();
  t->add_flag("--all-clips", tr.all_clips, "Train on every clip instead of the 90% split");
  t->add_flag("--quiet", tr.quiet);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict cloth meshes");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--dataset", pr.dataset, "Predict every frame of a dataset");
  p->add_option("--asset", pr.asset, "Rig JSON (with --pose)");
  p->add_option("--pose", pr.poses, "Pose JSON files");
  p->add_option("--out", pr.out, "Output directory")->required();
  p->add_flag("--resolve-penetrations", pr.resolve);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Error metrics");
  e->add_option("--pred", ev.pred);
  e->add_option("--gt", ev.gt);
  e->add_option("--dataset", ev.dataset);
  e->add_option("--checkpoint", ev.checkpoint);
  e->add_option("--split", ev.split, "train, test or all")->capture_default_str();
  e->add_option("--out", ev.out, "Metrics CSV (default stdout)");
  e->add_flag("--resolve-penetrations", ev.resolve);

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Single-prediction latency");
  b->add_option("--checkpoint", be.checkpoint);
  b->add_option("--asset", be.asset);
  b->add_option("--reps", be.reps)->capture_default_str();
  b->add_option("--resolution", be.resolution, "Skirt resolution when no checkpoint is given")
      ->capture_default_str();
  b->add_option("--seed", be.seed)->capture_default_str();

  GradCheckArgs gc;
  auto* c = app.add_subcommand("grad-check", "End-to-end finite-difference gradient check");
  c->add_option("--asset", gc.asset)->capture_default_str();
  c->add_option("--seed", gc.seed)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*p) return cmd_predict(pr);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_bench(be);
    if (*c) return cmd_grad_check(gc);
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitInput;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitInput;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ctsn::cli
