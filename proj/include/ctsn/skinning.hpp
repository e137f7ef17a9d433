#pragma once

#include "ctsn/mesh.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace ctsn {

/// Row-major 3x4 affine transform [R | t].
using Affine = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;
using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Affine identity_affine();
Affine compose(const Affine& a, const Affine& b);  // a * b
Affine inverse(const Affine& a);                   // throws if not invertible
Vec3 apply(const Affine& a, const Vec3& p);

struct Joint {
  std::string name;
  int parent = -1;
  Affine bind = identity_affine();
};

/// Joint hierarchy in topological order (parent index < child index) with a
/// single parentless hip joint.
class Skeleton {
 public:
  Skeleton() = default;
  Skeleton(std::vector<Joint> joints, int hip_index);

  const std::vector<Joint>& joints() const noexcept { return joints_; }
  std::size_t joint_count() const noexcept { return joints_.size(); }
  int hip_index() const noexcept { return hip_; }

 private:
  std::vector<Joint> joints_;
  int hip_ = 0;
};

/// Per-joint skinning matrices gamma_j = world_j * inverse(bind_j), with the
/// hip translation removed.
struct Pose {
  std::vector<Affine> transforms;

  static Pose identity(std::size_t joints);
};

/// Dense non-negative matrix (vertices x joints) whose rows sum to one.
class SkinningWeights {
 public:
  SkinningWeights() = default;
  /// Rows within 1e-6 of unit sum are renormalised; anything further off,
  /// or any entry outside [0, 1], is rejected.
  explicit SkinningWeights(WeightMatrix w);

  const WeightMatrix& matrix() const noexcept { return w_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(w_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(w_.cols()); }

 private:
  WeightMatrix w_;
};

/// gamma_j = world_j * inverse(bind_j), then the hip's translation is
/// subtracted from every gamma_j.
Pose center_pose(const std::vector<Affine>& world, const Skeleton& skeleton);

/// v_i' = sum_j W_ij (gamma_j v_i), evaluated as v_i + sum_j W_ij (gamma_j - I) v_i so
/// identity poses return the input bit for bit.
Positions lbs_skin(const Positions& vertices, const Pose& pose, const SkinningWeights& weights);
/// Same as above on an unvalidated weight matrix (used for fused weights).
Positions lbs_skin(const Positions& vertices, const Pose& pose, const WeightMatrix& weights);

/// Row-major flattening of every 3x4 block, in joint order (length 12 * joints).
std::vector<double> pose_to_feature(const Pose& pose);

/// Forward kinematics: world transforms from per-joint local rotations about
/// the bind positions, plus a root translation. Bind rotations must be identity
/// for the offsets to be meaningful; procedural assets satisfy this.
std::vector<Affine> forward_kinematics(const Skeleton& skeleton,
                                       const std::vector<Eigen::Matrix3d>& local_rotations,
                                       const Vec3& root_translation);

}  // namespace ctsn
