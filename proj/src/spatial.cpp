#include "ctsn/spatial.hpp"

#include "ctsn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ctsn {

namespace {
constexpr std::uint32_t kLeafSize = 8;
constexpr std::uint32_t kTriLeafSize = 4;
}  // namespace

KdTree::KdTree(Positions points) : points_(std::move(points)) {
  if (points_.empty()) throw ValidationError("cannot build a KD-tree over zero points");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, static_cast<std::uint32_t>(points_.size()), 0);
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, std::size_t depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end});
  depth_ = std::max(depth_, depth);
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (auto q = begin; q < end; ++q) {
    lo = lo.cwiseMin(points_[order_[q]]);
    hi = hi.cwiseMax(points_[order_[q]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  auto first = order_.begin() + begin, last = order_.begin() + end;
  std::sort(first, last, [&](std::uint32_t a, std::uint32_t b) {
    const double ca = points_[a][axis], cb = points_[b][axis];
    return ca < cb || (ca == cb && a < b);
  });
  const std::uint32_t mid = begin + (end - begin) / 2;
  // Read before the children re-sort their halves.
  const double split = points_[order_[mid]][axis];
  const auto left = build(begin, mid, depth + 1);
  const auto right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t id, const Vec3& q, double& best_d2, std::uint32_t& best) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (auto k = node.begin; k < node.end; ++k) {
      const auto idx = order_[k];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  // left holds coordinates <= split, right holds coordinates >= split
  const double diff = q[node.axis] - node.split;
  const auto near = diff < 0.0 ? node.left : node.right;
  const auto far = diff < 0.0 ? node.right : node.left;
  search(near, q, best_d2, best);
  if (diff * diff <= best_d2) search(far, q, best_d2, best);
}

KdTree::Hit KdTree::nearest(const Vec3& query) const {
  double best_d2 = std::numeric_limits<double>::infinity();
  std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
  search(0, query, best_d2, best);
  return {best, std::sqrt(best_d2)};
}

KdTree build_kdtree(const Positions& points) { return KdTree(points); }

KdTree::Hit nearest_index(const KdTree& tree, const Vec3& query) { return tree.nearest(query); }

Binding bind_cloth_to_body(const Mesh& cloth, const Mesh& body) {
  if (body.vertex_count() == 0) throw ValidationError("cannot bind cloth to an empty body mesh");
  const KdTree tree(body.vertices());
  Binding out(cloth.vertex_count());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint32_t>(tree.nearest(cloth.vertices()[i]).index);
  return out;
}

Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5)
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return {1.0, 0.0, 0.0};
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return {0.0, 1.0, 0.0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return {1.0 - v, v, 0.0};
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return {0.0, 0.0, 1.0};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return {1.0 - w, 0.0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0.0, 1.0 - w, w};
  }
  const double denom = va + vb + vc;
  if (!(std::abs(denom) > 0.0)) return {1.0, 0.0, 0.0};  // degenerate triangle
  const double v = vb / denom, w = vc / denom;
  return {1.0 - v - w, v, w};
}

SurfaceIndex::SurfaceIndex(Mesh mesh) : mesh_(std::move(mesh)) {
  if (mesh_.triangle_count() == 0) throw ValidationError("closest-point queries need a non-empty mesh");
  normals_ = vertex_normals(mesh_);
  order_.resize(mesh_.triangle_count());
  std::iota(order_.begin(), order_.end(), 0u);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t SurfaceIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  const auto& v = mesh_.vertices();
  const auto& tris = mesh_.triangles();
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (auto q = begin; q < end; ++q)
    for (auto vi : tris[order_[q]]) {
      node.lo = node.lo.cwiseMin(v[vi]);
      node.hi = node.hi.cwiseMax(v[vi]);
    }
  node.begin = begin;
  node.end = end;
  nodes_.push_back(node);
  if (end - begin <= kTriLeafSize) return id;

  int axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  auto centroid = [&](std::uint32_t t) {
    return v[tris[t][0]][axis] + v[tris[t][1]][axis] + v[tris[t][2]][axis];
  };
  std::sort(order_.begin() + begin, order_.begin() + end, [&](std::uint32_t a, std::uint32_t b) {
    const double ca = centroid(a), cb = centroid(b);
    return ca < cb || (ca == cb && a < b);
  });
  const std::uint32_t mid = begin + (end - begin) / 2;
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {
double box_distance2(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
  return d.squaredNorm();
}
}  // namespace

SurfacePoint SurfaceIndex::evaluate(const Vec3& p, std::size_t t) const {
  const auto& tri = mesh_.triangles()[t];
  const auto& v = mesh_.vertices();
  const Vec3 bary = closest_point_barycentric(p, v[tri[0]], v[tri[1]], v[tri[2]]);
  SurfacePoint sp;
  sp.point = bary[0] * v[tri[0]] + bary[1] * v[tri[1]] + bary[2] * v[tri[2]];
  Vec3 n = bary[0] * normals_[tri[0]] + bary[1] * normals_[tri[1]] + bary[2] * normals_[tri[2]];
  double len = n.norm();
  if (!(len > 0.0)) {
    n = (v[tri[1]] - v[tri[0]]).cross(v[tri[2]] - v[tri[0]]);
    len = n.norm();
  }
  sp.normal = len > 0.0 ? Vec3(n / len) : Vec3(0.0, 0.0, 1.0);
  sp.distance = (p - sp.point).norm();
  sp.inside = (p - sp.point).dot(sp.normal) < 0.0;
  sp.triangle = t;
  return sp;
}

void SurfaceIndex::search(std::int32_t id, const Vec3& p, double& best_d2, std::uint32_t& best) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    const auto& v = mesh_.vertices();
    for (auto q = node.begin; q < node.end; ++q) {
      const auto t = order_[q];
      const auto& tri = mesh_.triangles()[t];
      const Vec3 bary = closest_point_barycentric(p, v[tri[0]], v[tri[1]], v[tri[2]]);
      const Vec3 c = bary[0] * v[tri[0]] + bary[1] * v[tri[1]] + bary[2] * v[tri[2]];
      const double d2 = (p - c).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && t < best)) {
        best_d2 = d2;
        best = t;
      }
    }
    return;
  }
  const double dl = box_distance2(p, nodes_[node.left].lo, nodes_[node.left].hi);
  const double dr = box_distance2(p, nodes_[node.right].lo, nodes_[node.right].hi);
  const bool left_first = dl <= dr;
  const auto first = left_first ? node.left : node.right;
  const auto second = left_first ? node.right : node.left;
  const double d_first = left_first ? dl : dr, d_second = left_first ? dr : dl;
  if (d_first <= best_d2) search(first, p, best_d2, best);
  if (d_second <= best_d2) search(second, p, best_d2, best);
}

SurfacePoint SurfaceIndex::closest(const Vec3& p) const {
  double best_d2 = std::numeric_limits<double>::infinity();
  std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
  search(0, p, best_d2, best);
  return evaluate(p, best);
}

std::vector<SurfacePoint> SurfaceIndex::closest(const Positions& queries, bool parallel) const {
  std::vector<SurfacePoint> out(queries.size());
  const auto n = static_cast<std::int64_t>(queries.size());
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[i] = closest(queries[i]);
  } else {
    for (std::int64_t i = 0; i < n; ++i) out[i] = closest(queries[i]);
  }
  return out;
}

SurfacePoint closest_surface_point(const Mesh& mesh, const Vec3& p) { return SurfaceIndex(mesh).closest(p); }

}  // namespace ctsn
