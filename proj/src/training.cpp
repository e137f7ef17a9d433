#include "ctsn/training.hpp"

#include "ctsn/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace ctsn {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t Dataset::sample_count() const {
  std::size_t n = 0;
  for (const auto& c : clips) n += c.samples.size();
  return n;
}

namespace {

std::string frame_stem(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu", f);
  return buf;
}

std::vector<const Sample*> flatten(const Dataset& d) {
  std::vector<const Sample*> out;
  for (const auto& c : d.clips)
    for (const auto& s : c.samples) out.push_back(&s);
  return out;
}

}  // namespace

void validate_dataset(const Dataset& d) {
  if (d.clips.empty()) throw ValidationError("dataset has no clips");
  for (const auto& c : d.clips) {
    if (c.samples.empty()) throw ValidationError("clip '" + c.name + "' is empty");
    for (std::size_t f = 0; f < c.samples.size(); ++f) {
      const auto& s = c.samples[f];
      if (s.pose.transforms.size() != d.asset.skeleton.joint_count())
        throw ValidationError("clip '" + c.name + "' frame " + std::to_string(f) + ": pose has " +
                              std::to_string(s.pose.transforms.size()) + " transforms, skeleton has " +
                              std::to_string(d.asset.skeleton.joint_count()));
      if (!s.gt.same_topology(d.asset.cloth))
        throw ValidationError("clip '" + c.name + "' frame " + std::to_string(f) +
                              ": gt mesh does not share the cloth template topology");
    }
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset d;
  d.asset = load_rig(dir / "asset.json");
  if (fs::exists(dir / "meta.json")) {
    std::ifstream in(dir / "meta.json");
    try {
      d.meta = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError((dir / "meta.json").string() + ": " + e.what());
    }
  }
  const fs::path clips = dir / "clips";
  if (!fs::is_directory(clips)) throw IoError("dataset has no clips directory: " + clips.string());
  std::vector<fs::path> clip_dirs;
  for (const auto& e : fs::directory_iterator(clips))
    if (e.is_directory()) clip_dirs.push_back(e.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());
  for (const auto& cd : clip_dirs) {
    Clip clip;
    clip.name = cd.filename().string();
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(cd)) {
      const auto name = e.path().filename().string();
      const std::string suffix = ".pose.json";
      if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(stems.begin(), stems.end());
    for (const auto& stem : stems) {
      const fs::path gt = cd / (stem + ".gt.obj");
      if (!fs::exists(gt)) throw IoError("missing ground truth " + gt.string());
      clip.samples.push_back({load_pose(cd / (stem + ".pose.json")), load_obj(gt)});
    }
    d.clips.push_back(std::move(clip));
  }
  validate_dataset(d);
  return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir / "clips");
  save_rig(d.asset, dir / "asset.json");
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
    out << d.meta.dump(2) << '\n';
  }
  for (const auto& c : d.clips) {
    const fs::path cd = dir / "clips" / c.name;
    fs::create_directories(cd);
    for (std::size_t f = 0; f < c.samples.size(); ++f) {
      save_pose(c.samples[f].pose, cd / (frame_stem(f) + ".pose.json"));
      save_obj(c.samples[f].gt, cd / (frame_stem(f) + ".gt.obj"));
    }
  }
}

double loss(const std::vector<Positions>& pred, const std::vector<Positions>& gt) {
  if (pred.size() != gt.size())
    throw ValidationError("loss: " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(gt.size()) + " targets");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gt[s].size())
      throw ValidationError("loss: sample " + std::to_string(s) + " has " + std::to_string(pred[s].size()) +
                            " predicted vertices vs " + std::to_string(gt[s].size()));
    for (std::size_t i = 0; i < pred[s].size(); ++i) sum += (pred[s][i] - gt[s][i]).norm();
    count += pred[s].size();
  }
  if (count == 0) throw ValidationError("loss: empty batch");
  return sum / static_cast<double>(count);
}

ad::Var loss_on_tape(const std::vector<ad::Var>& pred, const std::vector<Tensor>& gt) {
  if (pred.empty() || pred.size() != gt.size())
    throw ValidationError("loss: " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(gt.size()) + " targets");
  std::size_t total = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (!pred[s].value().same_shape(gt[s]))
      throw ValidationError("loss: sample " + std::to_string(s) + " is " + pred[s].value().shape_string() +
                            ", target is " + gt[s].shape_string());
    total += gt[s].rows();
  }
  ad::Tape& tape = pred[0].tape();
  ad::Var sum;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    auto dist = ad::l2_norm_rows(ad::sub(pred[s], tape.constant(gt[s])));
    // mean over this sample, weighted by its share of all vertices
    auto term = ad::scale(ad::mean_all(dist), static_cast<double>(gt[s].rows()) / static_cast<double>(total));
    sum = s == 0 ? term : ad::add(sum, term);
  }
  return sum;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d) {
  const std::size_t count = d.clips.size();
  if (count < 2) throw ValidationError("split needs at least 2 clips, got " + std::to_string(count));
  const auto ceil90 = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(count)));
  const std::size_t n_train = std::min(ceil90, count - 1);
  Dataset train, test;
  train.asset = test.asset = d.asset;
  train.meta = test.meta = d.meta;
  for (std::size_t c = 0; c < count; ++c) (c < n_train ? train : test).clips.push_back(d.clips[c]);
  return {std::move(train), std::move(test)};
}

std::vector<Positions> smoothed_targets(const Dataset& d, double lambda, int iters) {
  std::vector<Positions> out;
  for (const auto* s : flatten(d)) out.push_back(frequency_decompose(s->gt, lambda, iters).low.vertices());
  return out;
}

double dataset_loss(const Dataset& d, const Model& model, StreamMask mask) {
  std::vector<Positions> pred, gt;
  const Predictor predictor(d.asset, model);
  for (const auto* s : flatten(d)) {
    pred.push_back(predictor.predict(s->pose, mask).vertices());
    gt.push_back(s->gt.vertices());
  }
  return loss(pred, gt);
}

void write_log_csv(const std::vector<EpochLog>& log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write log " + path.string());
  out << "epoch,stage,loss\n";
  out << std::setprecision(17);
  for (const auto& e : log) out << e.epoch << ',' << e.stage << ',' << e.loss << '\n';
}

namespace {

// Stage B sees the Stage-A part of each sample as constants.
struct FrozenStageA {
  Tensor base_template;  // T_C + D_S
  Tensor weights;        // fused W_C
};

std::vector<std::string> concat_names(std::initializer_list<std::vector<std::string>> groups) {
  std::vector<std::string> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

ParamSet collect_grads(const ad::Tape& tape, const ModelVars& vars) {
  ParamSet grads;
  for (const auto& [name, v] : vars.trainable()) grads.add(name, tape.grad(v));
  return grads;
}

}  // namespace

TrainResult train(const Dataset& train_set, const TrainConfig& config, const ProgressFn& progress) {
  if (!(config.lr > 0.0)) throw ValidationError("learning rate must be > 0");
  if (config.batch < 1) throw ValidationError("batch size must be >= 1");
  validate_dataset(train_set);
  const RigAsset& asset = train_set.asset;
  const auto samples = flatten(train_set);
  const std::size_t n_samples = samples.size();

  NetworkConfig net = config.network;
  net.joints = asset.skeleton.joint_count();
  net.cloth_vertices = asset.cloth.vertex_count();

  TrainResult result;
  result.model = init_model(net, config.seed);
  Model& model = result.model;

  auto topology = std::make_shared<const GraphTopology>(make_graph_topology(asset.cloth));
  std::vector<SampleInput> inputs;
  std::vector<Tensor> full_targets, low_targets;
  for (const auto* s : samples) {
    inputs.push_back(prepare_sample(asset, topology, s->pose));
    full_targets.push_back(to_tensor(s->gt.vertices()));
    low_targets.push_back(
        to_tensor(frequency_decompose(s->gt, config.smooth_lambda, config.smooth_iters).low.vertices()));
  }

  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  // One stage: epochs of shuffled mini-batches, Adam on `trainable`.
  auto run_stage = [&](const std::string& stage, std::size_t epochs, const std::vector<std::string>& trainable,
                       const std::function<ad::Var(ad::Tape&, const ModelVars&, std::size_t)>& predict,
                       const std::vector<Tensor>& targets, double baseline) {
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
      const auto order = shuffled(n_samples, shuffle_rng);
      double epoch_sum = 0.0;
      for (std::size_t start = 0, step = 0; start < n_samples; start += config.batch, ++step) {
        const std::size_t end = std::min(start + config.batch, n_samples);
        try {
          ad::Tape tape;
          ModelVars vars(tape, model.params, trainable);
          std::vector<ad::Var> pred;
          std::vector<Tensor> gt;
          for (std::size_t b = start; b < end; ++b) {
            pred.push_back(predict(tape, vars, order[b]));
            gt.push_back(targets[order[b]]);
          }
          const ad::Var l = loss_on_tape(pred, gt);
          tape.backward(l);
          epoch_sum += l.value().item() * static_cast<double>(end - start);
          adam_step(model.params, collect_grads(tape, vars), model.adam, config.lr);
        } catch (const NumericError& e) {
          throw NumericError("stage " + stage + " epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + ": " + e.what());
        }
      }
      const double epoch_loss = epoch_sum / static_cast<double>(n_samples);
      if (!std::isfinite(epoch_loss) || epoch_loss > config.divergence_factor * baseline)
        throw NumericError("stage " + stage + " diverged at epoch " + std::to_string(epoch) + ": loss " +
                           std::to_string(epoch_loss) + " vs baseline " + std::to_string(baseline));
      result.log.push_back({epoch, stage, epoch_loss});
      if (progress) progress(result.log.back());
    }
  };

  auto batch_loss_of = [&](const std::function<ad::Var(ad::Tape&, const ModelVars&, std::size_t)>& predict,
                           const std::vector<Tensor>& targets) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
      ad::Tape tape;
      ModelVars vars(tape, model.params, {});
      sum += loss_on_tape({predict(tape, vars, i)}, {targets[i]}).value().item();
    }
    return sum / static_cast<double>(n_samples);
  };

  // ---- Stage A
  const StreamMask mask_a{true, false, config.weight_residual};
  auto predict_a = [&](ad::Tape& tape, const ModelVars& vars, std::size_t i) {
    return forward_on_tape(tape, asset, inputs[i], vars, net, mask_a).output;
  };
  result.baseline_a = batch_loss_of(predict_a, low_targets);
  auto stage_a_names = concat_names({pose_embedding_names(net), skeleton_basis_names(net)});
  if (config.weight_residual) stage_a_names.push_back(kWeightResidualName);
  run_stage("A", config.epochs_a, stage_a_names, predict_a, low_targets, result.baseline_a);

  // ---- Stage B
  std::vector<FrozenStageA> frozen;
  for (std::size_t i = 0; i < n_samples; ++i) {
    ad::Tape tape;
    ModelVars vars(tape, model.params, {});
    auto f = forward_on_tape(tape, asset, inputs[i], vars, net, mask_a);
    frozen.push_back({f.template_posed.value(), f.weights.value()});
  }
  auto predict_b = [&](ad::Tape& tape, const ModelVars& vars, std::size_t i) {
    auto tmpl = ad::add(tape.constant(frozen[i].base_template), mesh_residual(inputs[i].graph, vars, net));
    return lbs_on_tape(tmpl, tape.constant(frozen[i].weights), inputs[i].pose);
  };
  result.baseline_b = batch_loss_of(predict_b, full_targets);
  run_stage("B", config.epochs_b, concat_names({graph_stream_names(net), mesh_basis_names(net)}), predict_b,
            full_targets, result.baseline_b);

  result.final_loss = dataset_loss(train_set, model, {true, true, config.weight_residual});
  result.log.push_back({config.epochs_a + config.epochs_b, "final", result.final_loss});
  if (progress) progress(result.log.back());
  return result;
}

}  // namespace ctsn
