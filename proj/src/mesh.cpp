#include "ctsn/mesh.hpp"

#include "ctsn/errors.hpp"
#include "ctsn/kernels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

namespace ctsn {

Mesh::Mesh(Positions vertices, std::vector<Triangle> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  const auto n = vertices_.size();
  edges_.reserve(triangles_.size() * 3);
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& tri = triangles_[t];
    for (auto idx : tri)
      if (idx >= n)
        throw ValidationError("triangle " + std::to_string(t) + " references vertex " +
                              std::to_string(idx) + " but mesh has " + std::to_string(n));
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
      throw ValidationError("triangle " + std::to_string(t) + " repeats a vertex index");
    for (int c = 0; c < 3; ++c) {
      auto a = tri[c], b = tri[(c + 1) % 3];
      edges_.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

Mesh Mesh::with_vertices(Positions vertices) const {
  if (vertices.size() != vertices_.size())
    throw ValidationError("vertex count mismatch: " + std::to_string(vertices.size()) + " vs " +
                          std::to_string(vertices_.size()));
  Mesh out = *this;
  out.vertices_ = std::move(vertices);
  return out;
}

Adjacency::Adjacency(const Mesh& mesh) : lists_(mesh.vertex_count()) {
  for (const auto& [a, b] : mesh.edges()) {
    lists_[a].push_back(b);
    lists_[b].push_back(a);
  }
  for (auto& l : lists_) std::sort(l.begin(), l.end());
}

namespace {

bool parse_double(std::string_view tok, double& out) {
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_face_index(std::string_view tok, long long& out) {
  tok = tok.substr(0, tok.find('/'));
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, out);
  return ec == std::errc() && ptr == end && !tok.empty();
}

}  // namespace

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open OBJ file: " + path.string());

  Positions verts;
  std::vector<std::pair<std::vector<long long>, std::size_t>> faces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::string tok;
      Vec3 p;
      int c = 0;
      while (ss >> tok) {
        if (c >= 3) break;  // optional w / vertex colours ignored
        if (!parse_double(tok, p[c])) throw ParseError("bad vertex coordinate '" + tok + "'", lineno);
        ++c;
      }
      if (c < 3) throw ParseError("vertex record needs 3 coordinates", lineno);
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<long long> idx;
      std::string tok;
      while (ss >> tok) {
        long long v;
        if (!parse_face_index(tok, v)) throw ParseError("bad face index '" + tok + "'", lineno);
        idx.push_back(v);
      }
      if (idx.size() < 3) throw ParseError("face needs at least 3 vertices", lineno);
      faces.emplace_back(std::move(idx), lineno);
    }
    // other records (vt, vn, o, g, s, usemtl, ...) are not part of the subset
  }

  std::vector<Triangle> tris;
  const auto n = static_cast<long long>(verts.size());
  for (const auto& [idx, ln] : faces) {
    std::vector<std::uint32_t> zero_based;
    for (long long v : idx) {
      if (v < 1 || v > n)
        throw ValidationError("face index " + std::to_string(v) + " out of range on line " +
                              std::to_string(ln));
      zero_based.push_back(static_cast<std::uint32_t>(v - 1));
    }
    for (std::size_t t = 1; t + 1 < zero_based.size(); ++t)
      tris.push_back({zero_based[0], zero_based[t], zero_based[t + 1]});
  }
  return Mesh(std::move(verts), std::move(tris));
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write OBJ file: " + path.string());
  for (const auto& v : mesh.vertices()) std::fprintf(f, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
  for (const auto& t : mesh.triangles()) std::fprintf(f, "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
  const bool failed = std::ferror(f) != 0;
  if (std::fclose(f) != 0 || failed) throw IoError("failed writing OBJ file: " + path.string());
}

Positions vertex_normals(const Mesh& mesh) {
  const auto n = mesh.vertex_count();
  Positions acc(n, Vec3::Zero());
  std::vector<char> referenced(n, 0);
  const auto& v = mesh.vertices();
  for (const auto& t : mesh.triangles()) {
    // cross product magnitude is twice the area, so this is area-weighted
    const Vec3 fn = (v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]);
    for (auto i : t) {
      acc[i] += fn;
      referenced[i] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!referenced[i])
      throw ValidationError("vertex " + std::to_string(i) + " is not referenced by any triangle");
    const double len = acc[i].norm();
    acc[i] = len > 0.0 ? Vec3(acc[i] / len) : Vec3(0.0, 0.0, 1.0);
  }
  return acc;
}

Mesh laplacian_smooth(const Mesh& mesh, double lambda, int iters) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
  if (iters < 0) throw ValidationError("iteration count must be non-negative");
  if (lambda == 0.0 || iters == 0) return mesh;

  const Adjacency adj(mesh);
  const auto n = mesh.vertex_count();
  std::vector<std::uint32_t> offsets(n + 1, 0), nb;
  for (std::size_t i = 0; i < n; ++i) {
    if (adj.neighbors(i).empty())
      throw ValidationError("vertex " + std::to_string(i) + " is isolated; cannot smooth");
    offsets[i + 1] = offsets[i] + static_cast<std::uint32_t>(adj.neighbors(i).size());
    nb.insert(nb.end(), adj.neighbors(i).begin(), adj.neighbors(i).end());
  }

  std::vector<double> cur(3 * n), next(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) cur[3 * i + c] = mesh.vertices()[i][c];
  for (int it = 0; it < iters; ++it) {
    kernels::parallel::laplacian_step(cur, offsets, nb, lambda, next);
    cur.swap(next);
  }
  Positions out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = Vec3(cur[3 * i], cur[3 * i + 1], cur[3 * i + 2]);
  return mesh.with_vertices(std::move(out));
}

Positions snap_to_grid(Positions points) {
  for (auto& p : points)
    for (int c = 0; c < 3; ++c) p[c] = std::nearbyint(p[c] / kCoordinateGrid) * kCoordinateGrid;
  return points;
}

FrequencySplit frequency_decompose(const Mesh& gt, double lambda, int iters) {
  const auto& g = gt.vertices();
  Positions low = snap_to_grid(laplacian_smooth(gt, lambda, iters).vertices());
  Positions high(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      // On-grid inputs make h exact. Otherwise re-deriving low from the
      // rounded residual still gives an exact pair unless the residual is
      // much larger than the coordinate.
      const double h = g[i][c] - low[i][c];
      const double l = g[i][c] - h;
      high[i][c] = h;
      low[i][c] = l;
    }
  }
  return {gt.with_vertices(std::move(low)), std::move(high)};
}

Bounds bounding_box(const Positions& points) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Bounds b{Vec3::Constant(inf), Vec3::Constant(-inf)};
  for (const auto& p : points) {
    b.min = b.min.cwiseMin(p);
    b.max = b.max.cwiseMax(p);
  }
  if (points.empty()) b = {Vec3::Zero(), Vec3::Zero()};
  return b;
}

}  // namespace ctsn
