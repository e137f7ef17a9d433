#include "ctsn/network.hpp"

#include "ctsn/checkpoint.hpp"
#include "ctsn/errors.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>

namespace ctsn {

using nlohmann::json;

json NetworkConfig::to_json() const {
  return {{"joints", joints},   {"cloth_vertices", cloth_vertices}, {"m", m},
          {"k", k},             {"phi_hidden", phi_hidden},         {"layers", layers},
          {"heads", heads},     {"head_dim", head_dim},             {"vertex_hidden", vertex_hidden}};
}

NetworkConfig NetworkConfig::from_json(const json& j) {
  NetworkConfig c;
  c.joints = j.at("joints").get<std::size_t>();
  c.cloth_vertices = j.at("cloth_vertices").get<std::size_t>();
  c.m = j.at("m").get<std::size_t>();
  c.k = j.at("k").get<std::size_t>();
  c.phi_hidden = j.at("phi_hidden").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  c.vertex_hidden = j.at("vertex_hidden").get<std::size_t>();
  return c;
}

namespace {

std::string layer_name(std::size_t l) { return "gt.l" + std::to_string(l) + "."; }
std::string head_name(std::size_t l, std::size_t h) { return layer_name(l) + "h" + std::to_string(h) + "."; }

void validate(const NetworkConfig& c) {
  if (c.joints == 0 || c.cloth_vertices == 0) throw ValidationError("network needs joints and cloth vertices");
  if (c.m < 1 || c.k < 1) throw ValidationError("m and k must be >= 1");
  if (c.heads < 1 || c.head_dim < 1 || c.phi_hidden < 1 || c.vertex_hidden < 1)
    throw ValidationError("layer widths must be >= 1");
}

}  // namespace

std::vector<std::string> pose_embedding_names(const NetworkConfig&) {
  return {"phi.l0.w", "phi.l0.b", "phi.l1.w", "phi.l1.b", "phi.l2.w", "phi.l2.b"};
}

std::vector<std::string> skeleton_basis_names(const NetworkConfig& c) {
  std::vector<std::string> n;
  for (std::size_t j = 0; j < c.m; ++j) n.push_back("skel_basis." + std::to_string(j));
  return n;
}

std::vector<std::string> graph_stream_names(const NetworkConfig& c) {
  std::vector<std::string> n;
  for (std::size_t l = 0; l < c.layers; ++l) {
    for (std::size_t h = 0; h < c.heads; ++h)
      for (const char* s : {"wq", "bq", "wk", "bk", "wv", "bv", "we", "be"}) n.push_back(head_name(l, h) + s);
    for (const char* s : {"wr", "br", "wg", "ln_scale", "ln_shift"}) n.push_back(layer_name(l) + s);
  }
  for (const char* s : {"vmlp.l0.w", "vmlp.l0.b", "vmlp.l1.w", "vmlp.l1.b"}) n.push_back(s);
  return n;
}

std::vector<std::string> mesh_basis_names(const NetworkConfig& c) {
  std::vector<std::string> n;
  for (std::size_t j = 0; j < c.k; ++j) n.push_back("mesh_basis." + std::to_string(j));
  return n;
}

Model init_model(const NetworkConfig& c, std::uint64_t seed) {
  validate(c);
  Model model;
  model.config = c;
  std::mt19937_64 rng(seed);
  auto& P = model.params;
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    P.add(prefix + "w", uniform_tensor(in, out, s, rng));
    P.add(prefix + "b", uniform_tensor(1, out, s, rng));
  };

  const std::size_t feat = 12 * c.joints;
  dense("phi.l0.", feat, c.phi_hidden);
  dense("phi.l1.", c.phi_hidden, c.phi_hidden);
  dense("phi.l2.", c.phi_hidden, c.m);
  for (const auto& n : skeleton_basis_names(c)) P.add(n, Tensor(c.cloth_vertices, 3));

  const std::size_t w = c.width();
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t in = l == 0 ? 3 : w;
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    const double se = 1.0 / std::sqrt(4.0);
    for (std::size_t h = 0; h < c.heads; ++h) {
      const auto p = head_name(l, h);
      P.add(p + "wq", uniform_tensor(in, c.head_dim, s, rng));
      P.add(p + "bq", uniform_tensor(1, c.head_dim, s, rng));
      P.add(p + "wk", uniform_tensor(in, c.head_dim, s, rng));
      P.add(p + "bk", uniform_tensor(1, c.head_dim, s, rng));
      P.add(p + "wv", uniform_tensor(in, c.head_dim, s, rng));
      P.add(p + "bv", uniform_tensor(1, c.head_dim, s, rng));
      P.add(p + "we", uniform_tensor(4, c.head_dim, se, rng));
      P.add(p + "be", uniform_tensor(1, c.head_dim, se, rng));
    }
    const auto p = layer_name(l);
    P.add(p + "wr", uniform_tensor(in, w, s, rng));
    P.add(p + "br", uniform_tensor(1, w, s, rng));
    P.add(p + "wg", uniform_tensor(3 * w, 1, 1.0 / std::sqrt(3.0 * static_cast<double>(w)), rng));
    P.add(p + "ln_scale", Tensor(1, w, 1.0));
    P.add(p + "ln_shift", Tensor(1, w, 0.0));
  }
  dense("vmlp.l0.", w, c.vertex_hidden);
  dense("vmlp.l1.", c.vertex_hidden, c.k);
  for (const auto& n : mesh_basis_names(c)) P.add(n, Tensor(c.cloth_vertices, 3));
  P.add(kWeightResidualName, Tensor(c.cloth_vertices, c.joints));
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  TensorFile f;
  f.tensors = model.params;
  json adam = {{"beta1", model.adam.beta1},
               {"beta2", model.adam.beta2},
               {"epsilon", model.adam.epsilon},
               {"step", model.adam.step}};
  json steps = json::object();
  for (const auto& [name, mom] : model.adam.moments) {
    f.tensors.add("adam.m." + name, mom.m);
    f.tensors.add("adam.v." + name, mom.v);
    steps[name] = mom.t;
  }
  adam["t"] = std::move(steps);
  f.meta = {{"kind", "ctsn-model"}, {"config", model.config.to_json()}, {"adam", std::move(adam)}};
  save_tensor_file(f, path);
}

Model load_model(const std::filesystem::path& path) {
  TensorFile f = load_tensor_file(path);
  try {
    Model model;
    model.config = NetworkConfig::from_json(f.meta.at("config"));
    const auto& adam = f.meta.at("adam");
    model.adam.beta1 = adam.at("beta1").get<double>();
    model.adam.beta2 = adam.at("beta2").get<double>();
    model.adam.epsilon = adam.at("epsilon").get<double>();
    model.adam.step = adam.at("step").get<long long>();
    for (const auto& name : f.tensors.names()) {
      if (name.rfind("adam.", 0) == 0) continue;
      model.params.add(name, f.tensors.at(name));
    }
    for (const auto& [name, t] : adam.at("t").items()) {
      AdamMoments mom;
      mom.m = f.tensors.at("adam.m." + name);
      mom.v = f.tensors.at("adam.v." + name);
      mom.t = t.get<long long>();
      model.adam.moments.emplace(name, std::move(mom));
    }
    // every expected tensor must be present with the right shape
    const Model ref = init_model(model.config, 0);
    for (const auto& name : ref.params.names()) {
      if (!model.params.contains(name)) throw ValidationError(path.string() + ": missing tensor '" + name + "'");
      if (!model.params.at(name).same_shape(ref.params.at(name)))
        throw ValidationError(path.string() + ": tensor '" + name + "' has shape " +
                              model.params.at(name).shape_string() + ", expected " +
                              ref.params.at(name).shape_string());
    }
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": bad model metadata: " + e.what());
  }
}

GraphTopology make_graph_topology(const Mesh& cloth) {
  const auto n = cloth.vertex_count();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> directed;  // (dst, src)
  directed.reserve(2 * cloth.edges().size() + n);
  for (const auto& [a, b] : cloth.edges()) {
    directed.emplace_back(a, b);
    directed.emplace_back(b, a);
  }
  for (std::uint32_t i = 0; i < n; ++i) directed.emplace_back(i, i);
  std::sort(directed.begin(), directed.end());

  GraphTopology g;
  g.node_count = n;
  std::vector<std::uint32_t> src, dst;
  g.edge_features = Tensor(directed.size(), 4);
  const auto& v = cloth.vertices();
  for (std::size_t e = 0; e < directed.size(); ++e) {
    const auto [d, s] = directed[e];
    dst.push_back(d);
    src.push_back(s);
    if (s != d) {
      const Vec3 ev = v[s] - v[d];
      g.edge_features(e, 0) = ev.x();
      g.edge_features(e, 1) = ev.y();
      g.edge_features(e, 2) = ev.z();
      g.edge_features(e, 3) = ev.norm();
    }
  }
  g.by_dst = ad::Segments::from_sorted_ids(dst, n);
  g.src = std::make_shared<const std::vector<std::uint32_t>>(std::move(src));
  g.dst = std::make_shared<const std::vector<std::uint32_t>>(std::move(dst));
  return g;
}

MeshGraph build_mesh_graph(const Binding& binding, const Positions& posed_body,
                           std::shared_ptr<const GraphTopology> topology) {
  if (binding.size() != topology->node_count)
    throw ValidationError("binding has " + std::to_string(binding.size()) + " entries for " +
                          std::to_string(topology->node_count) + " cloth vertices");
  MeshGraph g;
  g.node_features = Tensor(binding.size(), 3);
  for (std::size_t i = 0; i < binding.size(); ++i) {
    if (binding[i] >= posed_body.size())
      throw ValidationError("binding entry " + std::to_string(i) + " = " + std::to_string(binding[i]) +
                            " exceeds body vertex count " + std::to_string(posed_body.size()));
    for (int c = 0; c < 3; ++c) g.node_features(i, c) = posed_body[binding[i]][c];
  }
  g.topology = std::move(topology);
  return g;
}

MeshGraph build_mesh_graph(const Binding& binding, const Positions& posed_body, const Mesh& cloth) {
  return build_mesh_graph(binding, posed_body, std::make_shared<const GraphTopology>(make_graph_topology(cloth)));
}

ModelVars::ModelVars(ad::Tape& tape, const ParamSet& params, const std::vector<std::string>& trainable) {
  for (const auto& name : trainable)
    if (!params.contains(name)) throw ValidationError("unknown trainable parameter '" + name + "'");
  std::map<std::string, bool> train_set;
  for (const auto& name : trainable) train_set[name] = true;
  for (const auto& name : params.names()) {
    if (train_set.count(name)) {
      auto v = tape.leaf(params.at(name));
      vars_.emplace(name, v);
      trainable_.emplace(name, v);
    } else {
      vars_.emplace(name, tape.constant(params.at(name)));
    }
  }
}

ModelVars::ModelVars(const std::vector<std::string>& names, const std::vector<ad::Var>& vars) {
  if (names.size() != vars.size()) throw ValidationError("one var per parameter name expected");
  for (std::size_t i = 0; i < names.size(); ++i) {
    vars_.emplace(names[i], vars[i]);
    if (vars[i].tape().requires_grad(vars[i])) trainable_.emplace(names[i], vars[i]);
  }
}

ad::Var ModelVars::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ValidationError("model has no parameter '" + name + "'");
  return it->second;
}

namespace {

ad::Var dense(ad::Var x, const ModelVars& p, const std::string& prefix) {
  return ad::add(ad::matmul(x, p[prefix + "w"]), p[prefix + "b"]);
}

std::shared_ptr<const std::vector<std::uint32_t>> zeros_index(std::size_t n) {
  return std::make_shared<const std::vector<std::uint32_t>>(n, 0u);
}

}  // namespace

ad::Var pose_embedding(ad::Var feature, const ModelVars& p, const NetworkConfig& c) {
  if (feature.rows() != 1 || feature.cols() != 12 * c.joints)
    throw ValidationError("pose feature must be 1x" + std::to_string(12 * c.joints) + ", got " +
                          feature.value().shape_string());
  auto h = ad::relu(dense(feature, p, "phi.l0."));
  h = ad::relu(dense(h, p, "phi.l1."));
  return dense(h, p, "phi.l2.");
}

ad::Var basis_combine(ad::Var coefficients, const std::vector<ad::Var>& bases) {
  if (coefficients.cols() != bases.size())
    throw ValidationError("basis count " + std::to_string(bases.size()) + " does not match " +
                          std::to_string(coefficients.cols()) + " coefficients");
  // stacked[:, 3j + a] = basis_j[:, a]; repeated[:, 3j + a] = coeff[:, j]
  auto stacked = ad::concat_cols(bases);
  auto repeated = ad::repeat_cols(coefficients, 3);
  return ad::fold_cols(ad::mul(stacked, repeated), 3);
}

ad::Var skeleton_residual(ad::Var embedding, const ModelVars& p, const NetworkConfig& c) {
  if (embedding.rows() != 1 || embedding.cols() != c.m)
    throw ValidationError("embedding must be 1x" + std::to_string(c.m) + ", got " +
                          embedding.value().shape_string());
  std::vector<ad::Var> bases;
  for (const auto& n : skeleton_basis_names(c)) bases.push_back(p[n]);
  auto per_vertex = ad::gather_rows(embedding, zeros_index(c.cloth_vertices));
  return basis_combine(per_vertex, bases);
}

ad::Var graph_transformer_layer(ad::Var h, const GraphTopology& g, const ModelVars& p, const NetworkConfig& c,
                                std::size_t layer, LayerTrace* trace) {
  if (h.rows() != g.node_count)
    throw ValidationError("feature rows " + std::to_string(h.rows()) + " != node count " +
                          std::to_string(g.node_count));
  ad::Tape& tape = h.tape();
  const std::size_t d = c.head_dim, heads = c.heads, w = c.width();

  auto heads_concat = [&](const char* field) {
    std::vector<ad::Var> parts;
    for (std::size_t hh = 0; hh < heads; ++hh) parts.push_back(p[head_name(layer, hh) + field]);
    return heads == 1 ? parts[0] : ad::concat_cols(parts);
  };
  const auto wq = heads_concat("wq"), bq = heads_concat("bq");
  const auto wk = heads_concat("wk");
  const auto wv = heads_concat("wv"), bv = heads_concat("bv");
  const auto we = heads_concat("we"), be = heads_concat("be");

  auto q = ad::add(ad::matmul(h, wq), bq);  // n x Cd
  // q_i . b_k is the same for every edge into i and cancels in the softmax, so
  // the key bias is left off the tape; its gradient is exactly zero either way.
  auto k = ad::matmul(h, wk);
  auto v = ad::add(ad::matmul(h, wv), bv);
  auto e = ad::add(ad::matmul(tape.constant(g.edge_features), we), be);  // E x Cd

  auto q_dst = ad::gather_rows(q, g.dst);
  auto k_src = ad::gather_rows(k, g.src);
  auto v_src = ad::gather_rows(v, g.src);

  // per-head dot product q_i . (k_j + e_ij) via a block-indicator matmul
  Tensor block(w, heads);
  for (std::size_t hh = 0; hh < heads; ++hh)
    for (std::size_t t = 0; t < d; ++t) block(hh * d + t, hh) = 1.0;
  auto scores = ad::matmul(ad::mul(q_dst, ad::add(k_src, e)), tape.constant(std::move(block)));  // E x C
  auto alpha = ad::segment_softmax(ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(d))), g.by_dst);

  auto messages = ad::mul(ad::repeat_cols(alpha, d), ad::add(v_src, e));  // E x Cd
  auto h_hat = ad::segment_sum_rows(messages, g.by_dst);                  // n x Cd

  const auto lp = layer_name(layer);
  auto r = ad::add(ad::matmul(h, p[lp + "wr"]), p[lp + "br"]);
  auto gate_in = ad::concat_cols({h_hat, r, ad::sub(h_hat, r)});
  auto beta = ad::sigmoid(ad::matmul(gate_in, p[lp + "wg"]));  // n x 1
  // (1 - beta) h_hat + beta r
  auto mixed = ad::add(h_hat, ad::mul(ad::repeat_cols(beta, w), ad::sub(r, h_hat)));
  if (trace) {
    trace->attention = alpha;
    trace->gate = beta;
  }
  return ad::relu(ad::layer_norm_rows(mixed, p[lp + "ln_scale"], p[lp + "ln_shift"]));
}

ad::Var mesh_coefficients(const MeshGraph& graph, const ModelVars& p, const NetworkConfig& c) {
  if (graph.node_features.rows() != c.cloth_vertices)
    throw ValidationError("mesh graph has " + std::to_string(graph.node_features.rows()) +
                          " nodes, model expects " + std::to_string(c.cloth_vertices));
  ad::Tape& tape = p["dwc"].tape();
  auto h = tape.constant(graph.node_features);
  for (std::size_t l = 0; l < c.layers; ++l) h = graph_transformer_layer(h, *graph.topology, p, c, l);
  auto hidden = ad::relu(dense(h, p, "vmlp.l0."));
  return ad::relu(dense(hidden, p, "vmlp.l1."));
}

ad::Var mesh_residual(const MeshGraph& graph, const ModelVars& p, const NetworkConfig& c) {
  std::vector<ad::Var> bases;
  for (const auto& n : mesh_basis_names(c)) bases.push_back(p[n]);
  return basis_combine(mesh_coefficients(graph, p, c), bases);
}

ad::Var lbs_on_tape(ad::Var vertices, ad::Var weights, const Pose& pose) {
  const auto joints = pose.transforms.size();
  if (vertices.cols() != 3 || weights.rows() != vertices.rows() || weights.cols() != joints)
    throw ValidationError("lbs: vertices " + vertices.value().shape_string() + ", weights " +
                          weights.value().shape_string() + ", joints " + std::to_string(joints));
  // rot[b, 3j + a] = R_j[a, b] - I[a, b]; trans[0, 3j + a] = t_j[a]. The
  // displacement form v + sum_j w_j ((R_j - I) v + t_j) keeps identity poses exact.
  Tensor rot(3, 3 * joints), trans(1, 3 * joints);
  for (std::size_t j = 0; j < joints; ++j)
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) rot(b, 3 * j + a) = pose.transforms[j](a, b) - (a == b ? 1.0 : 0.0);
      trans(0, 3 * j + a) = pose.transforms[j](a, 3);
    }
  ad::Tape& tape = vertices.tape();
  auto per_joint = ad::add(ad::matmul(vertices, tape.constant(std::move(rot))), tape.constant(std::move(trans)));
  return ad::add(vertices, ad::fold_cols(ad::mul(per_joint, ad::repeat_cols(weights, 3)), 3));
}

Tensor to_tensor(const Positions& p) {
  Tensor t(p.size(), 3);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int c = 0; c < 3; ++c) t(i, c) = p[i][c];
  return t;
}

Positions to_positions(const Tensor& t) {
  if (t.cols() != 3) throw ValidationError("positions tensor must have 3 columns");
  Positions p(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) p[i] = Vec3(t(i, 0), t(i, 1), t(i, 2));
  return p;
}

SampleInput prepare_sample(const RigAsset& asset, std::shared_ptr<const GraphTopology> topology, const Pose& pose) {
  if (pose.transforms.size() != asset.skeleton.joint_count())
    throw ValidationError("pose has " + std::to_string(pose.transforms.size()) + " transforms, skeleton has " +
                          std::to_string(asset.skeleton.joint_count()) + " joints");
  SampleInput in;
  in.pose = pose;
  in.feature = Tensor(1, 12 * pose.transforms.size(), pose_to_feature(pose));
  const Positions posed_body = lbs_skin(asset.body.vertices(), pose, asset.body_weights);
  in.graph = build_mesh_graph(asset.binding, posed_body, std::move(topology));
  return in;
}

ForwardVars forward_on_tape(ad::Tape& tape, const RigAsset& asset, const SampleInput& in, const ModelVars& p,
                            const NetworkConfig& c, StreamMask mask) {
  if (asset.cloth.vertex_count() != c.cloth_vertices || asset.skeleton.joint_count() != c.joints)
    throw ValidationError("model was built for " + std::to_string(c.cloth_vertices) + " cloth vertices and " +
                          std::to_string(c.joints) + " joints; asset has " +
                          std::to_string(asset.cloth.vertex_count()) + " and " +
                          std::to_string(asset.skeleton.joint_count()));
  ForwardVars f;
  f.template_posed = tape.constant(to_tensor(asset.cloth.vertices()));
  if (mask.skeleton) {
    auto embedding = pose_embedding(tape.constant(in.feature), p, c);
    f.delta_s = skeleton_residual(embedding, p, c);
    f.template_posed = ad::add(f.template_posed, f.delta_s);
  }
  if (mask.mesh) {
    f.delta_m = mesh_residual(in.graph, p, c);
    f.template_posed = ad::add(f.template_posed, f.delta_m);
  }
  const Tensor initial(asset.cloth_weights_init.rows(), asset.cloth_weights_init.cols(),
                       std::vector<double>(asset.cloth_weights_init.matrix().data(),
                                           asset.cloth_weights_init.matrix().data() +
                                               asset.cloth_weights_init.matrix().size()));
  f.weights = mask.weight_residual ? ad::fuse_weights(initial, p[kWeightResidualName]) : tape.constant(initial);
  f.output = lbs_on_tape(f.template_posed, f.weights, in.pose);
  return f;
}

// ---- plain evaluation -----------------------------------------------------

std::vector<double> pose_embedding(const std::vector<double>& feature, const Model& model) {
  ad::Tape tape;
  ModelVars p(tape, model.params, {});
  auto out = pose_embedding(tape.constant(Tensor(1, feature.size(), feature)), p, model.config);
  return out.value().values();
}

Positions skeleton_residual(const std::vector<double>& embedding, const Model& model) {
  ad::Tape tape;
  ModelVars p(tape, model.params, {});
  auto out = skeleton_residual(tape.constant(Tensor(1, embedding.size(), embedding)), p, model.config);
  return to_positions(out.value());
}

Tensor graph_transformer_layer(const Tensor& h, const MeshGraph& graph, const Model& model, std::size_t layer) {
  if (layer >= model.config.layers) throw ValidationError("layer index out of range");
  ad::Tape tape;
  ModelVars p(tape, model.params, {});
  return graph_transformer_layer(tape.constant(h), *graph.topology, p, model.config, layer).value();
}

Positions mesh_residual(const MeshGraph& graph, const Model& model) {
  ad::Tape tape;
  ModelVars p(tape, model.params, {});
  return to_positions(mesh_residual(graph, p, model.config).value());
}

SkinningWeights fuse_weights(const SkinningWeights& initial, const Tensor& residual) {
  if (residual.rows() != initial.rows() || residual.cols() != initial.cols())
    throw ValidationError("weight residual is " + residual.shape_string() + ", initial weights are " +
                          std::to_string(initial.rows()) + "x" + std::to_string(initial.cols()));
  ad::Tape tape;
  const auto& m = initial.matrix();
  const Tensor init(m.rows(), m.cols(), std::vector<double>(m.data(), m.data() + m.size()));
  const Tensor& fused = ad::fuse_weights(init, tape.constant(residual)).value();
  WeightMatrix w(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w(r, c) = fused(r, c);
  return SkinningWeights(std::move(w));
}

Predictor::Predictor(const RigAsset& asset, const Model& model)
    : asset_(asset), model_(model), topology_(std::make_shared<const GraphTopology>(make_graph_topology(asset.cloth))) {}

SampleInput Predictor::prepare(const Pose& pose) const { return prepare_sample(asset_, topology_, pose); }

Mesh Predictor::predict(const Pose& pose, StreamMask mask) const {
  const SampleInput in = prepare(pose);
  ad::Tape tape;
  ModelVars p(tape, model_.params, {});
  auto f = forward_on_tape(tape, asset_, in, p, model_.config, mask);
  return asset_.cloth.with_vertices(to_positions(f.output.value()));
}

Mesh forward(const RigAsset& asset, const Binding& binding, const Pose& pose, const Model& model, StreamMask mask) {
  if (binding == asset.binding) return Predictor(asset, model).predict(pose, mask);
  RigAsset rebound = asset;
  rebound.binding = binding;
  return Predictor(rebound, model).predict(pose, mask);
}

}  // namespace ctsn
