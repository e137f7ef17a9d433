#pragma once

// Procedural rigs and a quasi-static mass-spring relaxer that produces the
// ground-truth cloth for training.

#include "ctsn/training.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ctsn {

enum class AssetKind { ArmCape, TubeSkirtBiped, QuadBlanket };

std::string to_string(AssetKind kind);
AssetKind parse_asset_kind(const std::string& name);  // "arm-cape", "tube-skirt-biped", "quad-blanket"

/// A rig plus the cloth vertices pinned to their skinned positions.
struct ClothAsset {
  RigAsset rig;
  AssetKind kind = AssetKind::TubeSkirtBiped;
  std::vector<std::uint32_t> pinned;  // sorted
};

/// Capsule-chain body around the skeleton, distance-falloff body weights and
/// a resolution x resolution cloth grid. Resolution must be >= 4.
ClothAsset make_asset(AssetKind kind, std::size_t resolution, std::uint64_t seed);

/// Skirt with an explicit grid (`around` columns, `rows` rings) on the biped,
/// uniformly scaled (1 is human size in metres).
ClothAsset make_skirt_asset(std::size_t around, std::size_t rows, std::uint64_t seed, double scale = 1.0);

/// Capsule from a to b (closed, outward winding).
Mesh make_capsule(const Vec3& a, const Vec3& b, double radius, std::size_t segments, std::size_t rings);

struct SimParams {
  double structural = 80.0;  // N/m
  double shear = 40.0;
  double bend = 4.0;
  Vec3 gravity = Vec3(0.0, -9.8, 0.0);
  double density = 0.25;   // kg/m^2, lumped to vertices by area
  double step = 0.0;       // gradient step (m/N); 0 picks 1 / (stiffness bound)
  double tolerance = 1e-4;  // max residual force, N
  std::size_t max_iterations = 4000;  // per substep
  double margin = 0.002;   // collision clearance, m
  std::size_t substeps = 8;

  nlohmann::json to_json() const;
  static SimParams from_json(const nlohmann::json& j);
};

/// Springs over a rest mesh: structural along edges, shear across the shared
/// longest edge of adjacent triangles, bend across nearly straight vertex
/// triples. Energy is spring potential plus gravity.
class ClothSystem {
 public:
  ClothSystem(const Mesh& rest, std::vector<std::uint32_t> pinned, const SimParams& params);

  double energy(const Positions& x) const;
  /// Energy gradient; entries of pinned vertices are zero.
  void gradient(const Positions& x, Positions& g) const;

  bool pinned(std::size_t i) const { return is_pinned_[i] != 0; }
  const std::vector<double>& masses() const noexcept { return mass_; }
  std::size_t spring_count() const noexcept { return a_.size(); }
  /// Upper bound on the gradient's Lipschitz constant.
  double stiffness_bound() const noexcept { return bound_; }

 private:
  std::vector<std::uint32_t> a_, b_;
  std::vector<double> rest_, k_;
  std::vector<double> mass_;
  std::vector<char> is_pinned_;
  Vec3 gravity_;
  double bound_ = 0.0;
};

struct RelaxStats {
  std::size_t iterations = 0;
  bool converged = true;          // every substep reached the tolerance
  double max_residual = 0.0;      // worst final residual over substeps
  double initial_energy = 0.0;    // after the first feasibility projection
  double final_energy = 0.0;
  bool record_trace = false;
  std::vector<std::vector<double>> energy_trace;  // accepted energies per substep
};

/// Interpolates from -> to over params.substeps substeps (rotation slerp,
/// translation lerp). Each substep minimises spring + gravity energy by
/// projected accelerated gradient descent with pinned vertices on their skinned
/// positions and penetrating vertices projected to the body surface + margin.
Mesh relax_cloth(const ClothAsset& asset, const Pose& from, const Pose& to, const Mesh& prev,
                 const SimParams& params, RelaxStats* stats = nullptr);

/// Pose blend used between frames.
Pose interpolate_pose(const Pose& from, const Pose& to, double t);

/// Smooth joint-angle trajectories in clips of 16 frames; frame 0 of each
/// clip is the bind pose.
std::vector<std::vector<Pose>> sample_poses(const ClothAsset& asset, std::size_t count, std::uint64_t seed);

inline constexpr std::size_t kFramesPerClip = 16;
inline constexpr int kGeneratorVersion = 1;

/// Relaxes every frame, warm-started from the previous one within a clip.
Dataset generate_dataset(const ClothAsset& asset, std::size_t pose_count, std::uint64_t seed,
                         const SimParams& params, std::size_t resolution = 0);

}  // namespace ctsn
