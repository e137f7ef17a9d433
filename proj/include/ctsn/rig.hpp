#pragma once

#include "ctsn/mesh.hpp"
#include "ctsn/skinning.hpp"
#include "ctsn/spatial.hpp"

#include <filesystem>

namespace ctsn {

/// Everything a character/garment pair needs: skeleton, character mesh and
/// weights, cloth template and its initial (nearest-body-vertex) weights.
struct RigAsset {
  Skeleton skeleton;
  Mesh body;
  SkinningWeights body_weights;
  Mesh cloth;
  SkinningWeights cloth_weights_init;
  Binding binding;  // nearest body vertex per cloth vertex, canonical pose
};

/// Validates dimensions and fills binding (and initial cloth weights when
/// none are given) from a KD-tree over the body vertices.
RigAsset make_rig(Skeleton skeleton, Mesh body, SkinningWeights body_weights, Mesh cloth,
                  std::optional<SkinningWeights> cloth_weights_init = std::nullopt);

/// Initial cloth weights: the body weight row of each cloth vertex's binding.
SkinningWeights transfer_weights(const SkinningWeights& body_weights, const Binding& binding);

/// Rig JSON. Mesh paths are resolved relative to the JSON file's directory.
RigAsset load_rig(const std::filesystem::path& path);
/// Writes the JSON plus body/cloth OBJ files next to it.
void save_rig(const RigAsset& asset, const std::filesystem::path& path,
              const std::string& body_obj = "body.obj", const std::string& cloth_obj = "cloth.obj");

Pose load_pose(const std::filesystem::path& path);
void save_pose(const Pose& pose, const std::filesystem::path& path);

}  // namespace ctsn
