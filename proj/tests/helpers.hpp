#pragma once

#include "ctsn/mesh.hpp"

#include <random>

namespace ctsn::test {

// Regular grid in the xz plane, w x h vertices, split into triangles.
inline Mesh grid_mesh(std::size_t w, std::size_t h, double spacing = 0.1) {
  Positions v;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      v.emplace_back(static_cast<double>(c) * spacing, 0.0, static_cast<double>(r) * spacing);
  std::vector<Triangle> t;
  for (std::size_t r = 0; r + 1 < h; ++r)
    for (std::size_t c = 0; c + 1 < w; ++c) {
      const auto i = static_cast<std::uint32_t>(r * w + c);
      const auto W = static_cast<std::uint32_t>(w);
      t.push_back({i, i + W, i + 1});
      t.push_back({i + 1, i + W, i + W + 1});
    }
  return Mesh(std::move(v), std::move(t));
}

inline Positions random_points(std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Positions p(n);
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

inline Mesh jitter(const Mesh& m, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amount, amount);
  Positions v = m.vertices();
  for (auto& x : v) x += Vec3(u(rng), u(rng), u(rng));
  return m.with_vertices(std::move(v));
}

}  // namespace ctsn::test

#include "ctsn/skinning.hpp"

#include <Eigen/Geometry>

namespace ctsn::test {

// Random joint rotations up to `max_angle` radians about random axes plus a
// root translation, hip-centred.
inline Pose random_pose(const Skeleton& sk, double max_angle, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Eigen::Matrix3d> rot;
  for (std::size_t j = 0; j < sk.joint_count(); ++j) {
    Vec3 axis(u(rng), u(rng), u(rng));
    if (axis.norm() < 1e-3) axis = Vec3::UnitX();
    rot.push_back(Eigen::AngleAxisd(max_angle * u(rng), axis.normalized()).toRotationMatrix());
  }
  return center_pose(forward_kinematics(sk, rot, Vec3(u(rng), u(rng), u(rng))), sk);
}

}  // namespace ctsn::test
