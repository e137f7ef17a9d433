#include "ctsn/rig.hpp"

#include "ctsn/errors.hpp"

#include <json.hpp>

#include <fstream>

namespace ctsn {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

Affine affine_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 12) throw ValidationError(what + ": expected 12 numbers");
  Affine a;
  for (int k = 0; k < 12; ++k) {
    if (!j[k].is_number()) throw ValidationError(what + ": entry " + std::to_string(k) + " is not a number");
    a(k / 4, k % 4) = j[k].get<double>();
  }
  return a;
}

json affine_to_json(const Affine& a) {
  json arr = json::array();
  for (int k = 0; k < 12; ++k) arr.push_back(a(k / 4, k % 4));
  return arr;
}

WeightMatrix weights_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + " must be an array of rows");
  const auto rows = j.size();
  const auto cols = rows ? j[0].size() : 0;
  WeightMatrix w(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ValidationError(what + " row " + std::to_string(r) + " has the wrong length");
    for (std::size_t c = 0; c < cols; ++c) w(r, c) = j[r][c].get<double>();
  }
  return w;
}

json weights_to_json(const WeightMatrix& w) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

SkinningWeights transfer_weights(const SkinningWeights& body_weights, const Binding& binding) {
  WeightMatrix w(binding.size(), body_weights.cols());
  for (std::size_t i = 0; i < binding.size(); ++i) {
    if (binding[i] >= body_weights.rows()) throw ValidationError("binding index out of range");
    w.row(i) = body_weights.matrix().row(binding[i]);
  }
  return SkinningWeights(std::move(w));
}

RigAsset make_rig(Skeleton skeleton, Mesh body, SkinningWeights body_weights, Mesh cloth,
                  std::optional<SkinningWeights> cloth_weights_init) {
  const auto k = skeleton.joint_count();
  if (body_weights.rows() != body.vertex_count() || body_weights.cols() != k)
    throw ValidationError("body weights are " + std::to_string(body_weights.rows()) + "x" +
                          std::to_string(body_weights.cols()) + ", expected " +
                          std::to_string(body.vertex_count()) + "x" + std::to_string(k));
  RigAsset a;
  a.binding = bind_cloth_to_body(cloth, body);
  if (cloth_weights_init) {
    if (cloth_weights_init->rows() != cloth.vertex_count() || cloth_weights_init->cols() != k)
      throw ValidationError("cloth_weights_init has the wrong shape");
    a.cloth_weights_init = std::move(*cloth_weights_init);
  } else {
    a.cloth_weights_init = transfer_weights(body_weights, a.binding);
  }
  a.skeleton = std::move(skeleton);
  a.body = std::move(body);
  a.body_weights = std::move(body_weights);
  a.cloth = std::move(cloth);
  return a;
}

RigAsset load_rig(const std::filesystem::path& path) {
  const json j = read_json(path);
  const auto dir = path.parent_path();
  try {
    std::vector<Joint> joints;
    const auto& jj = j.at("joints");
    for (std::size_t i = 0; i < jj.size(); ++i) {
      Joint joint;
      joint.name = jj[i].at("name").get<std::string>();
      joint.parent = jj[i].at("parent").get<int>();
      joint.bind = affine_from_json(jj[i].at("bind"), "joint " + std::to_string(i) + " bind");
      joints.push_back(std::move(joint));
    }
    Skeleton skeleton(std::move(joints), j.at("hip").get<int>());
    Mesh body = load_obj(dir / j.at("body_obj").get<std::string>());
    Mesh cloth = load_obj(dir / j.at("cloth_obj").get<std::string>());
    SkinningWeights bw(weights_from_json(j.at("body_weights"), "body_weights"));
    std::optional<SkinningWeights> cw;
    if (j.contains("cloth_weights_init") && !j["cloth_weights_init"].is_null())
      cw = SkinningWeights(weights_from_json(j["cloth_weights_init"], "cloth_weights_init"));
    return make_rig(std::move(skeleton), std::move(body), std::move(bw), std::move(cloth), std::move(cw));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_rig(const RigAsset& asset, const std::filesystem::path& path, const std::string& body_obj,
              const std::string& cloth_obj) {
  const auto dir = path.parent_path();
  save_obj(asset.body, dir / body_obj);
  save_obj(asset.cloth, dir / cloth_obj);
  json j;
  json joints = json::array();
  for (const auto& jt : asset.skeleton.joints())
    joints.push_back({{"name", jt.name}, {"parent", jt.parent}, {"bind", affine_to_json(jt.bind)}});
  j["joints"] = std::move(joints);
  j["hip"] = asset.skeleton.hip_index();
  j["body_obj"] = body_obj;
  j["cloth_obj"] = cloth_obj;
  j["body_weights"] = weights_to_json(asset.body_weights.matrix());
  j["cloth_weights_init"] = weights_to_json(asset.cloth_weights_init.matrix());
  write_text(path, j.dump(1) + "\n");
}

Pose load_pose(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    Pose p;
    const auto& t = j.at("transforms");
    for (std::size_t i = 0; i < t.size(); ++i)
      p.transforms.push_back(affine_from_json(t[i], "transform " + std::to_string(i)));
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_pose(const Pose& pose, const std::filesystem::path& path) {
  json t = json::array();
  for (const auto& a : pose.transforms) t.push_back(affine_to_json(a));
  write_text(path, json{{"transforms", std::move(t)}}.dump() + "\n");
}

}  // namespace ctsn
