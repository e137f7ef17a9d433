#include "ctsn/gradcheck.hpp"

#include <cstdio>
#include <map>

namespace ctsn {

std::string parameter_group(const std::string& name) {
  const auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

EndToEndCheck end_to_end_grad_check(const RigAsset& asset, const Model& model, const std::vector<Pose>& poses,
                                    const std::vector<Positions>& targets) {
  const auto names = model.params.names();
  auto topology = std::make_shared<const GraphTopology>(make_graph_topology(asset.cloth));
  std::vector<SampleInput> inputs;
  std::vector<Tensor> gt;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    inputs.push_back(prepare_sample(asset, topology, poses[i]));
    gt.push_back(to_tensor(targets.at(i)));
  }
  std::vector<Tensor> values;
  for (const auto& n : names) values.push_back(model.params.at(n));

  const ScalarFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& vars) {
    const ModelVars p(names, vars);
    std::vector<ad::Var> pred;
    for (const auto& in : inputs) pred.push_back(forward_on_tape(tape, asset, in, p, model.config).output);
    return loss_on_tape(pred, gt);
  };
  const GradCheckReport rep = finite_diff_check(fn, values);

  EndToEndCheck out;
  std::map<std::string, std::size_t> slot;
  for (std::size_t t = 0; t < names.size(); ++t) {
    const auto g = parameter_group(names[t]);
    if (!slot.count(g)) {
      slot[g] = out.groups.size();
      out.groups.push_back({g, 0, 0.0});
    }
    auto& ge = out.groups[slot[g]];
    ge.scalars += values[t].size();
    ge.max_rel_error = std::max(ge.max_rel_error, rep.per_tensor[t]);
  }
  out.max_rel_error = rep.max_rel_error;
  char buf[96];
  std::snprintf(buf, sizeof buf, "] analytic=%.6e numeric=%.6e", rep.worst_analytic, rep.worst_numeric);
  out.worst = names[rep.worst_tensor] + "[" + std::to_string(rep.worst_element) + buf;
  return out;
}

TinyInstance make_tiny_instance(std::uint64_t seed) {
  TinyInstance ti{make_skirt_asset(6, 5, seed, kTinyScale), {}, {}, {}};
  NetworkConfig cfg;
  cfg.joints = ti.asset.rig.skeleton.joint_count();
  cfg.cloth_vertices = ti.asset.rig.cloth.vertex_count();
  cfg.m = 4;
  cfg.k = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  ti.model = init_model(cfg, seed);

  std::mt19937_64 rng(seed + 1);
  auto u01 = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (const auto& n : skeleton_basis_names(cfg)) ti.model.params.at(n) = uniform_tensor(cfg.cloth_vertices, 3, 0.5 * kTinyScale, rng);
  for (const auto& n : mesh_basis_names(cfg)) ti.model.params.at(n) = uniform_tensor(cfg.cloth_vertices, 3, 0.5 * kTinyScale, rng);
  Tensor& dwc = ti.model.params.at(kWeightResidualName);
  for (std::size_t i = 0; i < dwc.size(); ++i) {
    const double mag = 0.01 + 0.04 * u01();
    dwc[i] = u01() < 0.5 ? -mag : mag;
  }

  const auto clips = sample_poses(ti.asset, kFramesPerClip, seed);
  ti.poses = {clips[0][5], clips[0][11]};
  // targets just off the prediction keep the loss, and so its rounding noise,
  // small while the distance gradient stays unit length
  const Predictor predictor(ti.asset.rig, ti.model);
  for (const auto& pose : ti.poses) {
    Positions t = predictor.predict(pose).vertices();
    const double e = 0.02 * kTinyScale;
    for (auto& v : t) v += Vec3(e * (2 * u01() - 1), e * (2 * u01() - 1), e * (2 * u01() - 1));
    ti.targets.push_back(std::move(t));
  }
  return ti;
}

double kink_margin(const TinyInstance& ti) {
  auto topology = std::make_shared<const GraphTopology>(make_graph_topology(ti.asset.rig.cloth));
  ad::Tape tape;
  const ModelVars p(tape, ti.model.params, {});
  for (const auto& pose : ti.poses)
    forward_on_tape(tape, ti.asset.rig, prepare_sample(ti.asset.rig, topology, pose), p, ti.model.config);
  return tape.kink_margin();
}

EndToEndCheck tiny_grad_check(std::uint64_t seed) {
  // Central differences straddling a ReLU kink measure the average of the two
  // one-sided slopes, not the derivative. Step to the next instance until every
  // non-smooth input is far from its kink relative to the step.
  std::uint64_t s = seed;
  TinyInstance ti = make_tiny_instance(s);
  double margin = kink_margin(ti);
  for (int attempt = 1; attempt < kTinyMaxAttempts && margin < kTinyKinkMargin; ++attempt) {
    s = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt);
    ti = make_tiny_instance(s);
    margin = kink_margin(ti);
  }
  EndToEndCheck out = end_to_end_grad_check(ti.asset.rig, ti.model, ti.poses, ti.targets);
  out.instance_seed = s;
  out.kink_margin = margin;
  return out;
}

}  // namespace ctsn
