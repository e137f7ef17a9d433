#pragma once

// End-to-end gradient check of the training loss through the full forward
// pass, reported per parameter group.

#include "ctsn/datagen.hpp"

namespace ctsn {

struct GroupError {
  std::string group;  // phi, skel_basis, gt, vmlp, mesh_basis, dwc
  std::size_t scalars = 0;
  double max_rel_error = 0.0;
};

struct EndToEndCheck {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
  std::string worst;  // parameter name and element of the worst entry
  std::uint64_t instance_seed = 0;  // tiny check only
  double kink_margin = 0.0;         // tiny check only
};

EndToEndCheck end_to_end_grad_check(const RigAsset& asset, const Model& model, const std::vector<Pose>& poses,
                                    const std::vector<Positions>& targets);

struct TinyInstance {
  ClothAsset asset;
  Model model;
  std::vector<Pose> poses;
  std::vector<Positions> targets;
};

TinyInstance make_tiny_instance(std::uint64_t seed);
/// Closest approach of any ReLU, clamp or norm input to its kink over the
/// instance's forward pass.
double kink_margin(const TinyInstance& instance);

/// The 30-vertex skirt (6 x 5) with m=4, k=8, L=1, C=2, d=4. Bases and the
/// weight residual are randomised away from zero so every group receives
/// gradient, and the residual avoids the clamp boundary. Instances whose
/// forward pass puts a ReLU, clamp or norm input within kTinyKinkMargin of its
/// kink are skipped deterministically.
EndToEndCheck tiny_grad_check(std::uint64_t seed);

inline constexpr double kTinyKinkMargin = 1e-4;
inline constexpr int kTinyMaxAttempts = 256;
// Central differences at h = 1e-6 carry about eps * |x| / h of rounding noise
// per gradient entry. At human scale that is ~3e-12, above the 1e-12 that the
// 1e-8 denominator floor allows, so the tiny rig is built at a twentieth size.
inline constexpr double kTinyScale = 0.05;

std::string parameter_group(const std::string& name);

}  // namespace ctsn
