#pragma once

#include "ctsn/mesh.hpp"

#include <cstdint>
#include <vector>

namespace ctsn {

/// Exact nearest-neighbour index over a static 3D point set.
///
/// Balanced median split on the axis of largest spread; medians are taken
/// from the order sorted by (coordinate, index), so construction is
/// deterministic. Ties between equidistant points resolve to the lowest index.
class KdTree {
 public:
  explicit KdTree(Positions points);

  struct Hit {
    std::size_t index;
    double distance;
  };
  Hit nearest(const Vec3& query) const;

  std::size_t size() const noexcept { return points_.size(); }
  std::size_t depth() const noexcept { return depth_; }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end, std::size_t depth);
  void search(std::int32_t node, const Vec3& q, double& best_d2, std::uint32_t& best) const;

  Positions points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t depth_ = 0;
};

KdTree build_kdtree(const Positions& points);
KdTree::Hit nearest_index(const KdTree& tree, const Vec3& query);

/// Per cloth vertex, the index of the nearest body vertex at canonical pose.
using Binding = std::vector<std::uint32_t>;

Binding bind_cloth_to_body(const Mesh& cloth, const Mesh& body);

struct SurfacePoint {
  Vec3 point;
  Vec3 normal;      // interpolated vertex normal at the closest point
  bool inside = false;
  double distance = 0.0;
  std::size_t triangle = 0;
};

/// Closest point on a triangle to p, as barycentric weights of (a, b, c).
Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Exact closest-surface-point queries against a fixed mesh (AABB tree over
/// triangles). Ties between equidistant triangles go to the lowest index.
class SurfaceIndex {
 public:
  explicit SurfaceIndex(Mesh mesh);

  SurfacePoint closest(const Vec3& p) const;
  /// Batch query; runs in parallel when `parallel` and threads are available.
  std::vector<SurfacePoint> closest(const Positions& queries, bool parallel = true) const;

  const Mesh& mesh() const noexcept { return mesh_; }
  const Positions& normals() const noexcept { return normals_; }

  /// Builds the result for a given triangle (shared with brute-force checks).
  SurfacePoint evaluate(const Vec3& p, std::size_t triangle) const;

 private:
  struct Node {
    Vec3 lo, hi;
    std::int32_t left = -1, right = -1;
    std::uint32_t begin = 0, end = 0;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& p, double& best_d2, std::uint32_t& best) const;

  Mesh mesh_;
  Positions normals_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

SurfacePoint closest_surface_point(const Mesh& mesh, const Vec3& p);

}  // namespace ctsn
