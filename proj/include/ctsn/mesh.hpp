#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace ctsn {

using Vec3 = Eigen::Vector3d;
using Positions = std::vector<Vec3>;
using Triangle = std::array<std::uint32_t, 3>;
using Edge = std::pair<std::uint32_t, std::uint32_t>;  // first < second

/// Triangle mesh with a derived, sorted set of unique undirected edges.
///
/// Connectivity is validated on construction: every index must be in range
/// and no triangle may repeat a vertex. Geometrically degenerate (zero-area)
/// triangles are allowed.
class Mesh {
 public:
  Mesh() = default;
  Mesh(Positions vertices, std::vector<Triangle> triangles);

  const Positions& vertices() const noexcept { return vertices_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  std::size_t vertex_count() const noexcept { return vertices_.size(); }
  std::size_t triangle_count() const noexcept { return triangles_.size(); }

  /// Same connectivity, new positions (count must match).
  Mesh with_vertices(Positions vertices) const;

  bool same_topology(const Mesh& other) const noexcept {
    return vertices_.size() == other.vertices_.size() && triangles_ == other.triangles_;
  }

 private:
  Positions vertices_;
  std::vector<Triangle> triangles_;
  std::vector<Edge> edges_;
};

/// Per-vertex sorted neighbour lists; the (0,1) adjacency matrix in list form.
/// Symmetric, without self entries.
class Adjacency {
 public:
  explicit Adjacency(const Mesh& mesh);

  const std::vector<std::uint32_t>& neighbors(std::size_t i) const { return lists_[i]; }
  std::size_t size() const noexcept { return lists_.size(); }

 private:
  std::vector<std::vector<std::uint32_t>> lists_;
};

Mesh load_obj(const std::filesystem::path& path);
void save_obj(const Mesh& mesh, const std::filesystem::path& path);

/// Area-weighted unit vertex normals. Zero accumulations map to +z.
Positions vertex_normals(const Mesh& mesh);

/// Uniform-weight Laplacian smoothing: v <- (1-lambda) v + lambda mean(N(v)).
Mesh laplacian_smooth(const Mesh& mesh, double lambda, int iters);

struct FrequencySplit {
  Mesh low;
  Positions high;
};

/// Fixed-point grid (2^-40 m) for generated coordinates. Two values on it whose
/// magnitudes stay below 2^12 have an exactly representable difference.
inline constexpr double kCoordinateGrid = 0x1p-40;

/// Rounds every coordinate to the nearest multiple of kCoordinateGrid.
Positions snap_to_grid(Positions points);

/// low = smoothed gt snapped to kCoordinateGrid, high = gt - low. low + high
/// reproduces gt bitwise when gt is on the grid, or when no coordinate is much
/// smaller than its smoothing shift; otherwise it can be off by one ulp.
FrequencySplit frequency_decompose(const Mesh& gt, double lambda, int iters);

struct Bounds {
  Vec3 min;
  Vec3 max;
  double diagonal() const { return (max - min).norm(); }
};

Bounds bounding_box(const Positions& points);

}  // namespace ctsn
