#pragma once

// Penetration detection and pull-out for predicted cloth, and the error
// metrics used for evaluation.

#include "ctsn/spatial.hpp"

#include <vector>

namespace ctsn {

struct PenetrationReport {
  std::vector<std::uint32_t> vertices;  // sorted, unique
  Positions closest;                    // v_B per penetrated vertex
  Positions normals;                    // n_B per penetrated vertex
  std::vector<double> depths;           // > 0
  std::size_t size() const noexcept { return vertices.size(); }
  bool empty() const noexcept { return vertices.empty(); }
};

PenetrationReport detect_penetrations(const Mesh& cloth, const SurfaceIndex& character);
PenetrationReport detect_penetrations(const Mesh& cloth, const Mesh& character);

struct ResolveResult {
  Mesh cloth;
  std::vector<std::size_t> penetrated_per_iteration;  // before each iteration, plus the final count
  std::size_t iterations = 0;
  std::size_t remaining() const { return penetrated_per_iteration.back(); }
};

/// Repeatedly moves every penetrated vertex to v_B + epsilon n_B and
/// re-detects, until none remain or max_iters is reached.
ResolveResult resolve_penetrations(const Mesh& cloth, const Mesh& character, double epsilon,
                                   std::size_t max_iters = 10);

/// 1e-3 of the character's bounding-box diagonal.
double default_resolve_epsilon(const Mesh& character);

struct MetricsResult {
  double e_dist = 0.0;  // meters
  double e_norm = 0.0;  // degrees
  std::vector<double> dist_per_vertex;
  std::vector<double> angle_per_vertex;  // degrees
};

MetricsResult eval_metrics(const Mesh& pred, const Mesh& gt);

}  // namespace ctsn
