#include "ctsn/postprocess.hpp"

#include "ctsn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctsn {

PenetrationReport detect_penetrations(const Mesh& cloth, const SurfaceIndex& character) {
  PenetrationReport rep;
  const auto hits = character.closest(cloth.vertices());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (!hits[i].inside) continue;
    rep.vertices.push_back(static_cast<std::uint32_t>(i));
    rep.closest.push_back(hits[i].point);
    rep.normals.push_back(hits[i].normal);
    rep.depths.push_back(hits[i].distance);
  }
  return rep;
}

PenetrationReport detect_penetrations(const Mesh& cloth, const Mesh& character) {
  return detect_penetrations(cloth, SurfaceIndex(character));
}

double default_resolve_epsilon(const Mesh& character) {
  return 1e-3 * bounding_box(character.vertices()).diagonal();
}

ResolveResult resolve_penetrations(const Mesh& cloth, const Mesh& character, double epsilon,
                                   std::size_t max_iters) {
  if (!(epsilon > 0.0)) throw ValidationError("resolve epsilon must be > 0");
  const SurfaceIndex index(character);
  ResolveResult res;
  Positions v = cloth.vertices();
  auto rep = detect_penetrations(cloth, index);
  res.penetrated_per_iteration.push_back(rep.size());
  while (!rep.empty() && res.iterations < max_iters) {
    for (std::size_t p = 0; p < rep.size(); ++p) v[rep.vertices[p]] = rep.closest[p] + epsilon * rep.normals[p];
    ++res.iterations;
    rep = detect_penetrations(cloth.with_vertices(v), index);
    res.penetrated_per_iteration.push_back(rep.size());
  }
  res.cloth = res.iterations == 0 ? cloth : cloth.with_vertices(std::move(v));
  return res;
}

MetricsResult eval_metrics(const Mesh& pred, const Mesh& gt) {
  if (!pred.same_topology(gt)) throw ValidationError("eval: prediction and ground truth differ in topology");
  MetricsResult m;
  const std::size_t n = gt.vertex_count();
  if (n == 0) return m;
  const auto np = vertex_normals(pred);
  const auto ng = vertex_normals(gt);
  m.dist_per_vertex.resize(n);
  m.angle_per_vertex.resize(n);
  double dsum = 0.0, asum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.dist_per_vertex[i] = (pred.vertices()[i] - gt.vertices()[i]).norm();
    const double c = std::clamp(np[i].dot(ng[i]), -1.0, 1.0);
    m.angle_per_vertex[i] = std::acos(c) * 180.0 / std::numbers::pi;
    dsum += m.dist_per_vertex[i];
    asum += m.angle_per_vertex[i];
  }
  m.e_dist = dsum / static_cast<double>(n);
  m.e_norm = asum / static_cast<double>(n);
  return m;
}

}  // namespace ctsn
