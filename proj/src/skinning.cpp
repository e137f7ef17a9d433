#include "ctsn/skinning.hpp"

#include "ctsn/errors.hpp"
#include "ctsn/kernels.hpp"

#include <Eigen/LU>

#include <cmath>

namespace ctsn {

Affine identity_affine() {
  Affine a = Affine::Zero();
  a.leftCols<3>().setIdentity();
  return a;
}

Affine compose(const Affine& a, const Affine& b) {
  Affine out;
  out.leftCols<3>() = a.leftCols<3>() * b.leftCols<3>();
  out.col(3) = a.leftCols<3>() * b.col(3) + a.col(3);
  return out;
}

Affine inverse(const Affine& a) {
  const Eigen::Matrix3d r = a.leftCols<3>();
  const double det = r.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12)
    throw ValidationError("affine transform is not invertible");
  const Eigen::Matrix3d ri = r.inverse();
  Affine out;
  out.leftCols<3>() = ri;
  out.col(3) = -ri * a.col(3);
  return out;
}

Vec3 apply(const Affine& a, const Vec3& p) { return a.leftCols<3>() * p + a.col(3); }

Skeleton::Skeleton(std::vector<Joint> joints, int hip_index) : joints_(std::move(joints)), hip_(hip_index) {
  if (joints_.empty()) throw ValidationError("skeleton has no joints");
  int roots = 0;
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    const int p = joints_[j].parent;
    if (p < 0) {
      ++roots;
      continue;
    }
    if (p >= static_cast<int>(j))
      throw ValidationError("joint " + std::to_string(j) + " ('" + joints_[j].name +
                            "') has parent " + std::to_string(p) +
                            " which does not precede it (cyclic or unsorted hierarchy)");
  }
  if (roots != 1)
    throw ValidationError("skeleton must have exactly one parentless joint, found " + std::to_string(roots));
  if (hip_ < 0 || hip_ >= static_cast<int>(joints_.size()) || joints_[hip_].parent >= 0)
    throw ValidationError("hip index " + std::to_string(hip_) + " is not the parentless joint");
}

Pose Pose::identity(std::size_t joints) { return Pose{std::vector<Affine>(joints, identity_affine())}; }

SkinningWeights::SkinningWeights(WeightMatrix w) : w_(std::move(w)) {
  for (Eigen::Index i = 0; i < w_.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < w_.cols(); ++j) {
      const double v = w_(i, j);
      if (!(v >= 0.0 && v <= 1.0))
        throw ValidationError("weight row " + std::to_string(i) + " has entry " + std::to_string(v) +
                              " outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValidationError("weight row " + std::to_string(i) + " sums to " + std::to_string(sum));
    if (sum != 1.0) w_.row(i) /= sum;
  }
}

Pose center_pose(const std::vector<Affine>& world, const Skeleton& skeleton) {
  if (world.size() != skeleton.joint_count())
    throw ValidationError("expected " + std::to_string(skeleton.joint_count()) + " world transforms, got " +
                          std::to_string(world.size()));
  Pose pose;
  pose.transforms.reserve(world.size());
  for (std::size_t j = 0; j < world.size(); ++j)
    pose.transforms.push_back(compose(world[j], inverse(skeleton.joints()[j].bind)));
  const Eigen::Vector3d hip_t = pose.transforms[skeleton.hip_index()].col(3);
  for (auto& g : pose.transforms) g.col(3) -= hip_t;
  return pose;
}

Positions lbs_skin(const Positions& vertices, const Pose& pose, const WeightMatrix& weights) {
  const auto n = vertices.size();
  const auto k = pose.transforms.size();
  if (static_cast<std::size_t>(weights.rows()) != n || static_cast<std::size_t>(weights.cols()) != k)
    throw ValidationError("weights are " + std::to_string(weights.rows()) + "x" + std::to_string(weights.cols()) +
                          " but skinning " + std::to_string(n) + " vertices with " + std::to_string(k) +
                          " joints");
  std::vector<double> t(12 * k);
  for (std::size_t j = 0; j < k; ++j)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) t[12 * j + 4 * r + c] = pose.transforms[j](r, c);
  std::vector<double> out(3 * n);
  const std::span<const double> v(vertices.empty() ? nullptr : vertices[0].data(), 3 * n);
  kernels::parallel::lbs(v, std::span<const double>(weights.data(), n * k), k, t, out);
  Positions res(n);
  for (std::size_t i = 0; i < n; ++i) res[i] = Vec3(out[3 * i], out[3 * i + 1], out[3 * i + 2]);
  return res;
}

Positions lbs_skin(const Positions& vertices, const Pose& pose, const SkinningWeights& weights) {
  return lbs_skin(vertices, pose, weights.matrix());
}

std::vector<double> pose_to_feature(const Pose& pose) {
  std::vector<double> f;
  f.reserve(12 * pose.transforms.size());
  for (const auto& g : pose.transforms)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) f.push_back(g(r, c));
  return f;
}

std::vector<Affine> forward_kinematics(const Skeleton& skeleton,
                                       const std::vector<Eigen::Matrix3d>& local_rotations,
                                       const Vec3& root_translation) {
  const auto& joints = skeleton.joints();
  if (local_rotations.size() != joints.size()) throw ValidationError("one local rotation per joint expected");
  std::vector<Affine> world(joints.size());
  for (std::size_t j = 0; j < joints.size(); ++j) {
    Affine local;
    local.leftCols<3>() = local_rotations[j];
    if (joints[j].parent < 0) {
      local.col(3) = joints[j].bind.col(3) + root_translation;
      world[j] = local;
    } else {
      const auto p = static_cast<std::size_t>(joints[j].parent);
      local.col(3) = joints[j].bind.col(3) - joints[p].bind.col(3);
      world[j] = compose(world[p], local);
    }
  }
  return world;
}

}  // namespace ctsn
