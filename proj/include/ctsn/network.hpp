#pragma once

// The two-stream skinning network.
//
//   T_C(g) = T_C + D_S(g) + D_M(g)          D_S: pose MLP weighting a skeleton basis
//   M_C(g) = LBS(T_C(g), g, W_C)            D_M: graph transformer over the nearest
//   W_C    = proj(W_C^I + dW_C)                  posed body vertices + mesh basis
//
// Everything trainable lives in a ParamSet with stable names:
//   phi.l{0,1,2}.{w,b}            pose embedding MLP (in x out weights)
//   skel_basis.{j}                n x 3, j < m
//   gt.l{l}.h{c}.{wq,bq,wk,bk,wv,bv,we,be}
//   gt.l{l}.{wr,br,wg,ln_scale,ln_shift}
//   vmlp.l{0,1}.{w,b}             per-vertex coefficient MLP
//   mesh_basis.{j}                n x 3, j < k
//   dwc                           n x joints

#include "ctsn/autodiff.hpp"
#include "ctsn/optim.hpp"
#include "ctsn/rig.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>

namespace ctsn {

struct NetworkConfig {
  std::size_t joints = 0;
  std::size_t cloth_vertices = 0;
  std::size_t m = 32;             // pose embedding width / skeleton basis count
  std::size_t k = 128;            // mesh basis count
  std::size_t phi_hidden = 64;
  std::size_t layers = 2;         // graph transformer depth L
  std::size_t heads = 4;          // C
  std::size_t head_dim = 16;      // d
  std::size_t vertex_hidden = 64;

  std::size_t width() const { return heads * head_dim; }
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Trainable parameters plus optimizer state (the model checkpoint).
struct Model {
  NetworkConfig config;
  ParamSet params;
  AdamState adam;
};

/// Weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); bases and dW_C zero,
/// layer-norm scale one and shift zero.
Model init_model(const NetworkConfig& config, std::uint64_t seed);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// Parameter names by group.
std::vector<std::string> pose_embedding_names(const NetworkConfig& c);
std::vector<std::string> skeleton_basis_names(const NetworkConfig& c);
std::vector<std::string> graph_stream_names(const NetworkConfig& c);  // gt.* and vmlp.*
std::vector<std::string> mesh_basis_names(const NetworkConfig& c);
inline const std::string kWeightResidualName = "dwc";

/// Static part of the mesh graph: cloth edges in both directions plus
/// self-loops, sorted by (destination, source), and per-edge features
/// [rest edge vector (source - destination), rest length].
struct GraphTopology {
  std::size_t node_count = 0;
  std::shared_ptr<const std::vector<std::uint32_t>> src, dst;
  ad::SegmentsPtr by_dst;
  Tensor edge_features;  // E x 4
  std::size_t edge_count() const { return src->size(); }
};

GraphTopology make_graph_topology(const Mesh& cloth);

struct MeshGraph {
  std::shared_ptr<const GraphTopology> topology;
  Tensor node_features;  // n x 3: posed body position of each cloth vertex's binding
};

MeshGraph build_mesh_graph(const Binding& binding, const Positions& posed_body, const Mesh& cloth);
MeshGraph build_mesh_graph(const Binding& binding, const Positions& posed_body,
                           std::shared_ptr<const GraphTopology> topology);

// ---- differentiable building blocks --------------------------------------

/// Parameters placed on a tape, either as differentiable leaves or constants.
class ModelVars {
 public:
  ModelVars(ad::Tape& tape, const ParamSet& params, const std::vector<std::string>& trainable);
  /// Wraps vars already on a tape; those requiring gradients count as trainable.
  ModelVars(const std::vector<std::string>& names, const std::vector<ad::Var>& vars);
  ad::Var operator[](const std::string& name) const;
  const std::map<std::string, ad::Var>& trainable() const noexcept { return trainable_; }

 private:
  std::map<std::string, ad::Var> vars_;
  std::map<std::string, ad::Var> trainable_;
};

/// Inspection hook for the graph transformer (attention per edge and head).
struct LayerTrace {
  ad::Var attention;  // E x C
  ad::Var gate;       // n x 1
};

ad::Var pose_embedding(ad::Var feature, const ModelVars& p, const NetworkConfig& c);
ad::Var skeleton_residual(ad::Var embedding, const ModelVars& p, const NetworkConfig& c);
ad::Var graph_transformer_layer(ad::Var h, const GraphTopology& g, const ModelVars& p, const NetworkConfig& c,
                                std::size_t layer, LayerTrace* trace = nullptr);
/// Coefficients (n x k, after ReLU) from the graph stream.
ad::Var mesh_coefficients(const MeshGraph& graph, const ModelVars& p, const NetworkConfig& c);
ad::Var mesh_residual(const MeshGraph& graph, const ModelVars& p, const NetworkConfig& c);
/// Combines per-vertex coefficients (n x count) with `count` n x 3 bases.
ad::Var basis_combine(ad::Var coefficients, const std::vector<ad::Var>& bases);
/// LBS of vertices (n x 3) with weights (n x joints) under a fixed pose.
ad::Var lbs_on_tape(ad::Var vertices, ad::Var weights, const Pose& pose);

/// Per-pose inputs that do not depend on trainable parameters.
struct SampleInput {
  Pose pose;
  Tensor feature;       // 1 x 12 joints
  MeshGraph graph;
};

SampleInput prepare_sample(const RigAsset& asset, std::shared_ptr<const GraphTopology> topology, const Pose& pose);

/// Which learned parts participate (others are held at zero).
struct StreamMask {
  bool skeleton = true;
  bool mesh = true;
  bool weight_residual = true;
};

struct ForwardVars {
  ad::Var delta_s, delta_m;  // invalid when masked
  ad::Var weights;           // fused cloth weights
  ad::Var template_posed;    // T_C + D_S + D_M
  ad::Var output;            // skinned cloth positions (n x 3)
};

ForwardVars forward_on_tape(ad::Tape& tape, const RigAsset& asset, const SampleInput& in, const ModelVars& p,
                            const NetworkConfig& c, StreamMask mask = {});

// ---- plain evaluation API ------------------------------------------------

std::vector<double> pose_embedding(const std::vector<double>& feature, const Model& model);
Positions skeleton_residual(const std::vector<double>& embedding, const Model& model);
Tensor graph_transformer_layer(const Tensor& h, const MeshGraph& graph, const Model& model, std::size_t layer);
Positions mesh_residual(const MeshGraph& graph, const Model& model);
SkinningWeights fuse_weights(const SkinningWeights& initial, const Tensor& residual);

/// Inference with the graph topology built once per asset.
class Predictor {
 public:
  Predictor(const RigAsset& asset, const Model& model);
  SampleInput prepare(const Pose& pose) const;
  Mesh predict(const Pose& pose, StreamMask mask = {}) const;

 private:
  const RigAsset& asset_;
  const Model& model_;
  std::shared_ptr<const GraphTopology> topology_;
};

/// Predicted cloth mesh for one pose (cloth topology unchanged).
Mesh forward(const RigAsset& asset, const Binding& binding, const Pose& pose, const Model& model,
             StreamMask mask = {});

Tensor to_tensor(const Positions& p);
Positions to_positions(const Tensor& t);

}  // namespace ctsn
