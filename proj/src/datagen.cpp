#include "ctsn/datagen.hpp"

#include "ctsn/errors.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <limits>
#include <numeric>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

namespace ctsn {

using nlohmann::json;

std::string to_string(AssetKind kind) {
  switch (kind) {
    case AssetKind::ArmCape: return "arm-cape";
    case AssetKind::TubeSkirtBiped: return "tube-skirt-biped";
    case AssetKind::QuadBlanket: return "quad-blanket";
  }
  return "unknown";
}

AssetKind parse_asset_kind(const std::string& name) {
  if (name == "arm-cape") return AssetKind::ArmCape;
  if (name == "tube-skirt-biped") return AssetKind::TubeSkirtBiped;
  if (name == "quad-blanket") return AssetKind::QuadBlanket;
  throw ValidationError("unknown asset kind '" + name + "' (expected arm-cape, tube-skirt-biped or quad-blanket)");
}

// ---- geometry --------------------------------------------------------------

namespace {

struct MeshBuilder {
  Positions v;
  std::vector<Triangle> t;

  void append(const Mesh& m) {
    const auto base = static_cast<std::uint32_t>(v.size());
    v.insert(v.end(), m.vertices().begin(), m.vertices().end());
    for (const auto& tri : m.triangles()) t.push_back({tri[0] + base, tri[1] + base, tri[2] + base});
  }
  Mesh build() { return Mesh(std::move(v), std::move(t)); }
};

// rows x cols grid; `wrap` closes the columns into a ring. Winding gives the
// normal cross(column direction, row direction).
template <class PosFn>
Mesh make_grid(std::size_t rows, std::size_t cols, bool wrap, PosFn pos) {
  Positions v;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) v.push_back(pos(i, j));
  std::vector<Triangle> t;
  const std::size_t jmax = wrap ? cols : cols - 1;
  auto id = [&](std::size_t i, std::size_t j) { return static_cast<std::uint32_t>(i * cols + j % cols); };
  for (std::size_t i = 0; i + 1 < rows; ++i)
    for (std::size_t j = 0; j < jmax; ++j) {
      t.push_back({id(i, j), id(i, j + 1), id(i + 1, j)});
      t.push_back({id(i, j + 1), id(i + 1, j + 1), id(i + 1, j)});
    }
  return Mesh(std::move(v), std::move(t));
}

struct Bone {
  Vec3 start, end;
};

double segment_distance(const Vec3& p, const Bone& b) {
  const Vec3 d = b.end - b.start;
  const double len2 = d.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((p - b.start).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (p - (b.start + s * d)).norm();
}

SkinningWeights falloff_weights(const Positions& verts, const std::vector<Bone>& bones, double sigma) {
  WeightMatrix w(verts.size(), bones.size());
  std::vector<double> d(bones.size());
  for (std::size_t i = 0; i < verts.size(); ++i) {
    for (std::size_t j = 0; j < bones.size(); ++j) d[j] = segment_distance(verts[i], bones[j]);
    const double dmin = *std::min_element(d.begin(), d.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < bones.size(); ++j) sum += w(i, j) = std::exp(-(d[j] - dmin) / sigma);
    for (std::size_t j = 0; j < bones.size(); ++j) w(i, j) /= sum;
  }
  return SkinningWeights(std::move(w));
}

Affine translation(const Vec3& t) {
  Affine a = identity_affine();
  a.col(3) = t;
  return a;
}

struct Blueprint {
  std::vector<std::string> names;
  std::vector<int> parents;
  std::vector<Vec3> heads;
  std::vector<Vec3> tails;
  struct Part {
    Vec3 a, b;
    double radius;
  };
  std::vector<Part> parts;
};

Blueprint biped() {
  Blueprint bp;
  bp.names = {"hip", "spine", "neck", "l_hip", "l_knee", "r_hip", "r_knee"};
  bp.parents = {-1, 0, 1, 0, 3, 0, 5};
  bp.heads = {{0, 0, 0}, {0, 0.2, 0}, {0, 0.45, 0}, {0.1, -0.05, 0}, {0.1, -0.45, 0}, {-0.1, -0.05, 0},
              {-0.1, -0.45, 0}};
  bp.tails = {{0, 0.2, 0}, {0, 0.45, 0}, {0, 0.6, 0}, {0.1, -0.45, 0}, {0.1, -0.85, 0}, {-0.1, -0.45, 0},
              {-0.1, -0.85, 0}};
  bp.parts = {{{0, -0.05, 0}, {0, 0.5, 0}, 0.13},
              {{0.1, -0.05, 0}, {0.1, -0.45, 0}, 0.07},
              {{0.1, -0.45, 0}, {0.1, -0.85, 0}, 0.06},
              {{-0.1, -0.05, 0}, {-0.1, -0.45, 0}, 0.07},
              {{-0.1, -0.45, 0}, {-0.1, -0.85, 0}, 0.06}};
  return bp;
}

Blueprint arm() {
  Blueprint bp;
  bp.names = {"shoulder", "upper", "lower", "hand"};
  bp.parents = {-1, 0, 1, 2};
  bp.heads = {{0, 0, 0}, {0.2, 0, 0}, {0.4, 0, 0}, {0.6, 0, 0}};
  bp.tails = {{0.2, 0, 0}, {0.4, 0, 0}, {0.6, 0, 0}, {0.75, 0, 0}};
  bp.parts = {{{0, 0, 0}, {0.75, 0, 0}, 0.06}};
  return bp;
}

Blueprint quadruped() {
  Blueprint bp;
  bp.names = {"root", "spine", "chest", "head", "fl_leg", "fr_leg", "bl_leg", "br_leg", "tail"};
  bp.parents = {-1, 0, 1, 2, 2, 2, 0, 0, 0};
  bp.heads = {{0, 0, 0},          {0.2, 0, 0},        {0.4, 0, 0},       {0.45, 0.02, 0},  {0.4, -0.05, 0.08},
              {0.4, -0.05, -0.08}, {0.0, -0.05, 0.08}, {0.0, -0.05, -0.08}, {-0.1, 0, 0}};
  bp.tails = {{0.2, 0, 0},        {0.4, 0, 0},        {0.45, 0, 0},        {0.65, 0.12, 0},  {0.4, -0.4, 0.08},
              {0.4, -0.4, -0.08}, {0.0, -0.4, 0.08},  {0.0, -0.4, -0.08},  {-0.3, 0.05, 0}};
  bp.parts = {{{-0.05, 0, 0}, {0.45, 0, 0}, 0.12},     {{0.45, 0.02, 0}, {0.65, 0.12, 0}, 0.05},
              {{0.4, -0.05, 0.08}, {0.4, -0.4, 0.08}, 0.04}, {{0.4, -0.05, -0.08}, {0.4, -0.4, -0.08}, 0.04},
              {{0.0, -0.05, 0.08}, {0.0, -0.4, 0.08}, 0.04}, {{0.0, -0.05, -0.08}, {0.0, -0.4, -0.08}, 0.04},
              {{-0.1, 0, 0}, {-0.3, 0.05, 0}, 0.025}};
  return bp;
}

struct Cloth {
  Mesh mesh;
  std::vector<std::uint32_t> pinned;
};

Cloth skirt_cloth(std::size_t around, std::size_t rows, double s) {
  const double radius = 0.22 * s, top = 0.05 * s, bottom = -0.45 * s;
  Cloth c;
  c.mesh = make_grid(rows, around, true, [&](std::size_t i, std::size_t j) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(around);
    const double y = top + (bottom - top) * static_cast<double>(i) / static_cast<double>(rows - 1);
    return Vec3(radius * std::cos(th), y, radius * std::sin(th));
  });
  for (std::uint32_t j = 0; j < around; ++j) c.pinned.push_back(j);
  return c;
}

Cloth cape_cloth(std::size_t r, double s) {
  Cloth c;
  c.mesh = make_grid(r, r, false, [&](std::size_t i, std::size_t j) {
    const double u = static_cast<double>(j) / static_cast<double>(r - 1);
    const double v = static_cast<double>(i) / static_cast<double>(r - 1);
    return Vec3(s * 0.7 * u, -s * 0.5 * v, -s * 0.1);
  });
  for (std::uint32_t j = 0; j < r; ++j) c.pinned.push_back(j);
  return c;
}

Cloth blanket_cloth(std::size_t r, double s) {
  Cloth c;
  c.mesh = make_grid(r, r, false, [&](std::size_t i, std::size_t j) {
    const double u = static_cast<double>(i) / static_cast<double>(r - 1);
    const double v = static_cast<double>(j) / static_cast<double>(r - 1);
    return Vec3(s * (-0.1 + 0.6 * u), s * 0.16, s * (-0.3 + 0.6 * v));
  });
  std::set<std::uint32_t> cols = {static_cast<std::uint32_t>((r - 1) / 2), static_cast<std::uint32_t>(r / 2)};
  for (std::uint32_t i = 0; i < r; ++i)
    for (auto j : cols) c.pinned.push_back(i * static_cast<std::uint32_t>(r) + j);
  std::sort(c.pinned.begin(), c.pinned.end());
  return c;
}

ClothAsset assemble(AssetKind kind, const Blueprint& bp, double s, Cloth cloth) {
  std::vector<Joint> joints;
  std::vector<Bone> bones;
  for (std::size_t j = 0; j < bp.names.size(); ++j) {
    joints.push_back({bp.names[j], bp.parents[j], translation(s * bp.heads[j])});
    bones.push_back({s * bp.heads[j], s * bp.tails[j]});
  }
  MeshBuilder body;
  for (const auto& part : bp.parts) {
    const double len = (part.b - part.a).norm() * s;
    const auto rings = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(len / 0.04)));
    body.append(make_capsule(s * part.a, s * part.b, s * part.radius, 16, rings));
  }
  Mesh body_mesh = body.build();
  SkinningWeights bw = falloff_weights(body_mesh.vertices(), bones, 0.04 * s);
  ClothAsset a;
  a.kind = kind;
  a.rig = make_rig(Skeleton(std::move(joints), 0), std::move(body_mesh), std::move(bw), std::move(cloth.mesh));
  a.pinned = std::move(cloth.pinned);
  return a;
}

double scale_from_seed(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return 1.0 + 0.05 * (2.0 * u - 1.0);
}

}  // namespace

Mesh make_capsule(const Vec3& a, const Vec3& b, double radius, std::size_t segments, std::size_t rings) {
  if (segments < 3 || rings < 1 || !(radius > 0.0)) throw ValidationError("bad capsule parameters");
  const Vec3 axis = (b - a).normalized();
  Vec3 e1 = axis.unitOrthogonal();
  Vec3 e2 = axis.cross(e1);
  const std::size_t cap = 4;
  std::vector<std::pair<Vec3, double>> ring;  // (centre, radius), bottom to top
  for (std::size_t k = 1; k <= cap; ++k) {
    const double phi = 0.5 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cap);
    ring.emplace_back(a - axis * radius * std::cos(phi), radius * std::sin(phi));
  }
  for (std::size_t k = 1; k < rings; ++k)
    ring.emplace_back(a + (b - a) * (static_cast<double>(k) / static_cast<double>(rings)), radius);
  for (std::size_t k = cap; k >= 1; --k) {
    const double phi = 0.5 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cap);
    ring.emplace_back(b + axis * radius * std::cos(phi), radius * std::sin(phi));
  }
  Positions v;
  v.push_back(a - axis * radius);
  for (const auto& [c, r] : ring)
    for (std::size_t s = 0; s < segments; ++s) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(segments);
      v.push_back(c + r * (std::cos(th) * e1 + std::sin(th) * e2));
    }
  v.push_back(b + axis * radius);
  const auto top = static_cast<std::uint32_t>(v.size() - 1);
  auto id = [&](std::size_t r, std::size_t s) { return static_cast<std::uint32_t>(1 + r * segments + s % segments); };
  std::vector<Triangle> t;
  for (std::size_t s = 0; s < segments; ++s) t.push_back({0, id(0, s + 1), id(0, s)});
  for (std::size_t r = 0; r + 1 < ring.size(); ++r)
    for (std::size_t s = 0; s < segments; ++s) {
      t.push_back({id(r, s), id(r, s + 1), id(r + 1, s)});
      t.push_back({id(r, s + 1), id(r + 1, s + 1), id(r + 1, s)});
    }
  const std::size_t last = ring.size() - 1;
  for (std::size_t s = 0; s < segments; ++s) t.push_back({top, id(last, s), id(last, s + 1)});
  return Mesh(std::move(v), std::move(t));
}

ClothAsset make_asset(AssetKind kind, std::size_t resolution, std::uint64_t seed) {
  if (resolution < 4) throw ValidationError("asset resolution must be >= 4, got " + std::to_string(resolution));
  const double s = scale_from_seed(seed);
  switch (kind) {
    case AssetKind::ArmCape: return assemble(kind, arm(), s, cape_cloth(resolution, s));
    case AssetKind::TubeSkirtBiped:
      return assemble(kind, biped(), s, skirt_cloth(resolution, resolution, s));
    case AssetKind::QuadBlanket: return assemble(kind, quadruped(), s, blanket_cloth(resolution, s));
  }
  throw ValidationError("unknown asset kind");
}

ClothAsset make_skirt_asset(std::size_t around, std::size_t rows, std::uint64_t seed, double scale) {
  if (around < 3 || rows < 2) throw ValidationError("skirt needs >= 3 columns and >= 2 rows");
  if (!(scale > 0.0)) throw ValidationError("skirt scale must be positive");
  const double s = scale * scale_from_seed(seed);
  return assemble(AssetKind::TubeSkirtBiped, biped(), s, skirt_cloth(around, rows, s));
}

// ---- simulation ------------------------------------------------------------

json SimParams::to_json() const {
  return {{"structural", structural}, {"shear", shear},
          {"bend", bend},             {"gravity", {gravity.x(), gravity.y(), gravity.z()}},
          {"density", density},       {"step", step},
          {"tolerance", tolerance},   {"max_iterations", max_iterations},
          {"margin", margin},         {"substeps", substeps}};
}

SimParams SimParams::from_json(const json& j) {
  SimParams p;
  p.structural = j.value("structural", p.structural);
  p.shear = j.value("shear", p.shear);
  p.bend = j.value("bend", p.bend);
  if (j.contains("gravity")) {
    const auto& g = j.at("gravity");
    p.gravity = Vec3(g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>());
  }
  p.density = j.value("density", p.density);
  p.step = j.value("step", p.step);
  p.tolerance = j.value("tolerance", p.tolerance);
  p.max_iterations = j.value("max_iterations", p.max_iterations);
  p.margin = j.value("margin", p.margin);
  p.substeps = j.value("substeps", p.substeps);
  return p;
}

ClothSystem::ClothSystem(const Mesh& rest, std::vector<std::uint32_t> pinned, const SimParams& params)
    : gravity_(params.gravity) {
  if (!(params.structural > 0.0 && params.shear > 0.0 && params.bend > 0.0))
    throw ValidationError("spring stiffnesses must be > 0");
  if (!(params.tolerance > 0.0)) throw ValidationError("tolerance must be > 0");
  if (params.margin < 0.0) throw ValidationError("margin must be >= 0");
  const auto n = rest.vertex_count();
  const auto& x = rest.vertices();
  is_pinned_.assign(n, 0);
  for (auto p : pinned) {
    if (p >= n) throw ValidationError("pinned vertex " + std::to_string(p) + " out of range");
    is_pinned_[p] = 1;
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  auto add = [&](std::uint32_t i, std::uint32_t j, double k) {
    if (i > j) std::swap(i, j);
    if (i == j || !seen.insert({i, j}).second) return;
    a_.push_back(i);
    b_.push_back(j);
    rest_.push_back((x[i] - x[j]).norm());
    k_.push_back(k);
  };
  for (const auto& [i, j] : rest.edges()) add(i, j, params.structural);

  // shear: the other diagonal of two triangles sharing their longest edge
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> opposite;
  auto longest = [&](const Triangle& t) {
    int best = 0;
    double len = -1.0;
    for (int e = 0; e < 3; ++e) {
      const double l = (x[t[e]] - x[t[(e + 1) % 3]]).norm();
      if (l > len) len = l, best = e;
    }
    return best;
  };
  for (const auto& t : rest.triangles()) {
    const int e = longest(t);
    auto i = t[e], j = t[(e + 1) % 3];
    if (i > j) std::swap(i, j);
    opposite[{i, j}].push_back(t[(e + 2) % 3]);
  }
  for (const auto& [edge, opp] : opposite)
    if (opp.size() == 2) add(opp[0], opp[1], params.shear);

  // bend: across nearly straight neighbour triples
  const Adjacency adj(rest);
  for (std::uint32_t j = 0; j < n; ++j) {
    const auto& nb = adj.neighbors(j);
    for (std::size_t p = 0; p < nb.size(); ++p)
      for (std::size_t q = p + 1; q < nb.size(); ++q) {
        const Vec3 u = x[j] - x[nb[p]], w = x[nb[q]] - x[j];
        if (u.dot(w) > 0.9 * u.norm() * w.norm()) add(nb[p], nb[q], params.bend);
      }
  }

  mass_.assign(n, 0.0);
  for (const auto& t : rest.triangles()) {
    const double area = 0.5 * (x[t[1]] - x[t[0]]).cross(x[t[2]] - x[t[0]]).norm();
    for (auto v : t) mass_[v] += params.density * area / 3.0;
  }
  std::vector<double> row(n, 0.0);
  for (std::size_t s = 0; s < a_.size(); ++s) {
    row[a_[s]] += k_[s];
    row[b_[s]] += k_[s];
  }
  for (double r : row) bound_ = std::max(bound_, 2.0 * r);
}

double ClothSystem::energy(const Positions& x) const {
  double e = 0.0;
  for (std::size_t s = 0; s < a_.size(); ++s) {
    const double d = (x[a_[s]] - x[b_[s]]).norm() - rest_[s];
    e += 0.5 * k_[s] * d * d;
  }
  for (std::size_t i = 0; i < x.size(); ++i) e -= mass_[i] * gravity_.dot(x[i]);
  return e;
}

void ClothSystem::gradient(const Positions& x, Positions& g) const {
  g.assign(x.size(), Vec3::Zero());
  for (std::size_t s = 0; s < a_.size(); ++s) {
    const Vec3 d = x[a_[s]] - x[b_[s]];
    const double len = d.norm();
    if (len == 0.0) continue;
    const Vec3 f = k_[s] * (len - rest_[s]) / len * d;
    g[a_[s]] += f;
    g[b_[s]] -= f;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (is_pinned_[i]) {
      g[i].setZero();
    } else {
      g[i] -= mass_[i] * gravity_;
    }
  }
}

Pose interpolate_pose(const Pose& from, const Pose& to, double t) {
  if (from.transforms.size() != to.transforms.size()) throw ValidationError("poses differ in joint count");
  Pose out;
  for (std::size_t j = 0; j < from.transforms.size(); ++j) {
    const Eigen::Matrix3d ra = from.transforms[j].leftCols<3>(), rb = to.transforms[j].leftCols<3>();
    const Eigen::Quaterniond qa(ra), qb(rb);
    Affine a;
    a.leftCols<3>() = qa.slerp(t, qb).toRotationMatrix();
    a.col(3) = (1.0 - t) * from.transforms[j].col(3) + t * to.transforms[j].col(3);
    out.transforms.push_back(a);
  }
  return out;
}

namespace {

// The body proxy is a union of overlapping closed capsules. A point inside one
// capsule can have its nearest triangle on another and read as outside, so
// collisions are resolved against each connected component separately.
struct Component {
  std::vector<std::uint32_t> vertices;  // global ids
  std::vector<Triangle> triangles;      // local ids
};

std::vector<Component> split_components(const Mesh& mesh) {
  std::vector<std::uint32_t> parent(mesh.vertex_count());
  std::iota(parent.begin(), parent.end(), 0u);
  auto find = [&](std::uint32_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& t : mesh.triangles()) {
    parent[find(t[1])] = find(t[0]);
    parent[find(t[2])] = find(t[0]);
  }
  std::map<std::uint32_t, std::size_t> slot;
  std::vector<Component> parts;
  std::vector<std::uint32_t> local(mesh.vertex_count(), 0);
  for (std::uint32_t v = 0; v < mesh.vertex_count(); ++v) {
    auto [it, fresh] = slot.emplace(find(v), parts.size());
    if (fresh) parts.emplace_back();
    local[v] = static_cast<std::uint32_t>(parts[it->second].vertices.size());
    parts[it->second].vertices.push_back(v);
  }
  for (const auto& t : mesh.triangles())
    parts[slot.at(find(t[0]))].triangles.push_back({local[t[0]], local[t[1]], local[t[2]]});
  return parts;
}

std::vector<SurfaceIndex> body_parts(const std::vector<Component>& parts, const Positions& posed) {
  std::vector<SurfaceIndex> out;
  out.reserve(parts.size());
  for (const auto& c : parts) {
    Positions v;
    v.reserve(c.vertices.size());
    for (auto g : c.vertices) v.push_back(posed[g]);
    out.emplace_back(Mesh(std::move(v), c.triangles));
  }
  return out;
}

Vec3 separation_direction(const Vec3& x, const SurfacePoint& hit) {
  const Vec3 d = x - hit.point;
  const double len = d.norm();
  if (len < 1e-12) return hit.normal;
  return hit.inside ? Vec3(-d / len) : Vec3(d / len);
}

struct HalfSpace {
  Vec3 n;    // unit
  double c;  // n . x >= c
};

constexpr int kMaxContacts = 3;

// Solves for l with sum_j l_j (n_a . n_b) = rhs_a over the subset `mask` of
// the normals; false when the subset is degenerate.
bool solve_active(const Vec3* n, int count, unsigned mask, const double* rhs, double* l) {
  int idx[kMaxContacts], m = 0;
  for (int i = 0; i < count; ++i)
    if (mask & (1u << i)) idx[m++] = i;
  Eigen::Matrix3d G = Eigen::Matrix3d::Identity();
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  for (int a = 0; a < m; ++a) {
    r[a] = rhs[idx[a]];
    for (int b = 0; b < m; ++b) G(a, b) = n[idx[a]].dot(n[idx[b]]);
  }
  const auto lu = G.topLeftCorner(m, m).fullPivLu();
  if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12) return false;
  const Eigen::VectorXd sol = lu.solve(r.head(m));
  for (int i = 0; i < count; ++i) l[i] = 0.0;
  for (int a = 0; a < m; ++a) l[idx[a]] = sol[a];
  return true;
}

// Closest point to x in the intersection of `count` half-spaces; every
// active set is tried.
Vec3 project_halfspaces(const Vec3& x, const HalfSpace* h, int count) {
  Vec3 n[kMaxContacts];
  double rhs[kMaxContacts], l[kMaxContacts];
  for (int i = 0; i < count; ++i) {
    n[i] = h[i].n;
    rhs[i] = h[i].c - h[i].n.dot(x);
  }
  auto feasible = [&](const Vec3& p) {
    for (int i = 0; i < count; ++i)
      if (h[i].n.dot(p) < h[i].c - 1e-15) return false;
    return true;
  };
  if (feasible(x)) return x;
  Vec3 best = x;
  double best_d = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << count); ++mask) {
    if (!solve_active(n, count, mask, rhs, l)) continue;
    Vec3 p = x;
    for (int i = 0; i < count; ++i) p += l[i] * n[i];
    if (feasible(p) && (p - x).squaredNorm() < best_d) {
      best = p;
      best_d = (p - x).squaredNorm();
    }
  }
  // degenerate corner with no exact solution: satisfy the most violated face
  if (!std::isfinite(best_d)) {
    int worst = 0;
    for (int i = 1; i < count; ++i)
      if (rhs[i] > rhs[worst]) worst = i;
    best = x + rhs[worst] * n[worst];
  }
  return best;
}

// Active contact normals of a vertex (several in a crease or corner).
struct Contact {
  int count = 0;
  Vec3 n[kMaxContacts];
};

// Collision projection with cached clearance: a vertex that has moved less
// than its last measured clearance cannot have reached any part.
class Projector {
 public:
  static constexpr double kContactBand = 1.01;
  static constexpr int kRounds = 16;
  static constexpr double kSameFace = 0.999;

  Projector(const std::vector<SurfaceIndex>& parts, std::size_t n, double margin)
      : parts_(parts), margin_(margin), ref_(n, Vec3::Zero()), slack_(n, -1.0) {}

  // Projects free vertices of x in place and records their contacts.
  void apply(Positions& x, const ClothSystem& sys, std::vector<Contact>& contact) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      contact[i].count = 0;
      if (sys.pinned(i)) continue;
      if (slack_[i] > 0.0 && (x[i] - ref_[i]).norm() < slack_[i]) continue;
      // Project onto the linearised clearance half-spaces of the violated
      // surface patches (a crease between parts, a fold in one, or a corner),
      // re-linearising a few times. Projecting the original point keeps
      // the step first-order exact at creases.
      const Vec3 x0 = x[i];
      HalfSpace h[kMaxContacts];
      int active = 0;
      SurfacePoint hit;
      for (int round = 0; round < kRounds; ++round) {
        const double worst = most_violated(x[i], hit);
        if (worst <= 1e-12 * margin_) break;
        const Vec3 n = separation_direction(x[i], hit);
        // a face already in the set is re-linearised, a new one is appended
        // (the last slot is recycled once all are taken)
        int slot = std::min(active, kMaxContacts - 1);
        for (int a = 0; a < active; ++a)
          if (n.dot(h[a].n) > kSameFace) slot = a;
        h[slot] = HalfSpace{n, n.dot(hit.point) + margin_};
        active = std::max(active, slot + 1);
        x[i] = project_halfspaces(x0, h, active);
      }
      // rare leftovers: exact push-out, feasibility over smoothness
      for (int round = 0; round < kRounds && most_violated(x[i], hit) > 1e-12 * margin_; ++round)
        x[i] = hit.point + margin_ * separation_direction(x[i], hit);
      Contact& c = contact[i];
      auto add_normal = [&](const Vec3& n) {
        for (int a = 0; a < c.count; ++a)
          if (n.dot(c.n[a]) > kSameFace) return;
        if (c.count < kMaxContacts) c.n[c.count++] = n;
      };
      for (int a = 0; a < active; ++a) add_normal(h[a].n);
      double clearance = std::numeric_limits<double>::infinity();
      for (const auto& part : parts_) {
        const SurfacePoint s = part.closest(x[i]);
        if (s.inside || s.distance < kContactBand * margin_) {
          add_normal(separation_direction(x[i], s));
        } else {
          clearance = std::min(clearance, s.distance);
        }
      }
      if (contact[i].count > 0) {
        slack_[i] = -1.0;
      } else {
        ref_[i] = x[i];
        slack_[i] = clearance - kContactBand * margin_;
      }
    }
  }

 private:
  double most_violated(const Vec3& x, SurfacePoint& hit) const {
    double worst = 0.0;
    for (const auto& part : parts_) {
      const SurfacePoint s = part.closest(x);
      const double violation = s.inside ? margin_ + s.distance : margin_ - s.distance;
      if (violation > worst) {
        worst = violation;
        hit = s;
      }
    }
    return worst;
  }

  const std::vector<SurfaceIndex>& parts_;
  double margin_;
  Positions ref_;
  std::vector<double> slack_;
};

// f + sum l_i n_i minimised over l >= 0: the force the contacts cannot
// balance. At most three unknowns, so every active set is tried.
Vec3 unbalanced_force(const Vec3& f, const Contact& c) {
  Vec3 best = f;
  double rhs[kMaxContacts], l[kMaxContacts];
  for (int i = 0; i < c.count; ++i) rhs[i] = -f.dot(c.n[i]);
  for (unsigned mask = 1; mask < (1u << c.count); ++mask) {
    if (!solve_active(c.n, c.count, mask, rhs, l)) continue;
    bool ok = true;
    Vec3 r = f;
    for (int i = 0; i < c.count; ++i) {
      ok = ok && l[i] >= 0.0;
      r += l[i] * c.n[i];
    }
    if (ok && r.squaredNorm() < best.squaredNorm()) best = r;
  }
  return best;
}

// Largest net force on a free vertex once contact reactions (pushes along the
// outward normals) are taken out.
double residual_force(const Positions& g, const ClothSystem& sys, const std::vector<Contact>& contact) {
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (sys.pinned(i)) continue;
    worst = std::max(worst, unbalanced_force(-g[i], contact[i]).norm());
  }
  return worst;
}

struct SubstepResult {
  std::size_t iterations = 0;
  bool converged = false;
  double residual = 0.0;
  double initial_energy = 0.0, final_energy = 0.0;
};

SubstepResult solve_substep(const ClothSystem& sys, const std::vector<SurfaceIndex>& parts,
                            const Positions& targets, const std::vector<std::uint32_t>& pinned, Positions& x,
                            const SimParams& p, std::vector<double>* trace) {
  const std::size_t n = x.size();
  for (auto i : pinned) x[i] = targets[i];
  Projector proj(parts, n, p.margin);
  std::vector<Contact> contact(n), cand_contact(n);
  proj.apply(x, sys, contact);

  SubstepResult r;
  double energy = sys.energy(x);
  r.initial_energy = energy;
  if (trace) trace->push_back(energy);
  const double alpha0 = p.step > 0.0 ? p.step : 1.0 / sys.stiffness_bound();
  double alpha = alpha0;
  Positions g, gy, y(n), cand(n), x_prev = x;
  sys.gradient(x, g);
  std::size_t k = 0;
  while (true) {
    r.residual = residual_force(g, sys, contact);
    if (r.residual < p.tolerance) {
      r.converged = true;
      break;
    }
    if (r.iterations >= p.max_iterations || alpha < 1e-8 * alpha0) break;
    ++r.iterations;
    const double beta = static_cast<double>(k) / static_cast<double>(k + 3);
    for (std::size_t i = 0; i < n; ++i) y[i] = sys.pinned(i) ? x[i] : Vec3(x[i] + beta * (x[i] - x_prev[i]));
    if (k == 0) {
      gy = g;
    } else {
      sys.gradient(y, gy);
    }
    for (std::size_t i = 0; i < n; ++i) cand[i] = y[i] - alpha * gy[i];
    proj.apply(cand, sys, cand_contact);
    const double e = sys.energy(cand);
    if (!(e <= energy)) {
      // restart momentum first, then shorten the step
      if (k > 0) {
        k = 0;
        x_prev = x;
      } else {
        alpha *= 0.5;
      }
      continue;
    }
    x_prev = x;
    x = cand;
    contact = cand_contact;
    energy = e;
    if (trace) trace->push_back(energy);
    sys.gradient(x, g);
    ++k;
  }
  r.final_energy = energy;
  return r;
}

}  // namespace

Mesh relax_cloth(const ClothAsset& asset, const Pose& from, const Pose& to, const Mesh& prev,
                 const SimParams& params, RelaxStats* stats) {
  const RigAsset& rig = asset.rig;
  if (!prev.same_topology(rig.cloth)) throw ValidationError("relax: previous cloth differs from the template");
  if (params.substeps < 1) throw ValidationError("relax: substeps must be >= 1");
  const ClothSystem sys(rig.cloth, asset.pinned, params);
  const auto components = split_components(rig.body);
  Positions x = prev.vertices();
  RelaxStats local;
  RelaxStats& st = stats ? *stats : local;
  st.iterations = 0;
  st.converged = true;
  st.max_residual = 0.0;
  st.energy_trace.clear();
  for (std::size_t s = 1; s <= params.substeps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(params.substeps);
    const Pose pose = interpolate_pose(from, to, t);
    const auto parts = body_parts(components, lbs_skin(rig.body.vertices(), pose, rig.body_weights));
    const Positions targets = lbs_skin(rig.cloth.vertices(), pose, rig.cloth_weights_init);
    std::vector<double>* trace = nullptr;
    if (st.record_trace) trace = &st.energy_trace.emplace_back();
    const auto r = solve_substep(sys, parts, targets, asset.pinned, x, params, trace);
    if (s == 1) st.initial_energy = r.initial_energy;
    st.final_energy = r.final_energy;
    st.iterations += r.iterations;
    st.converged = st.converged && r.converged;
    st.max_residual = std::max(st.max_residual, r.residual);
  }
  return rig.cloth.with_vertices(std::move(x));
}

// ---- poses -----------------------------------------------------------------

namespace {

struct Limits {
  Vec3 lo, hi;
};

std::vector<Limits> joint_limits(AssetKind kind) {
  switch (kind) {
    case AssetKind::TubeSkirtBiped:
      return {{{-0.15, -0.3, -0.1}, {0.15, 0.3, 0.1}}, {{-0.25, -0.3, -0.2}, {0.25, 0.3, 0.2}},
              {{-0.3, -0.4, -0.2}, {0.3, 0.4, 0.2}},   {{-0.8, -0.2, -0.1}, {0.5, 0.2, 0.35}},
              {{0.0, 0.0, 0.0}, {1.2, 0.0, 0.0}},      {{-0.8, -0.2, -0.35}, {0.5, 0.2, 0.1}},
              {{0.0, 0.0, 0.0}, {1.2, 0.0, 0.0}}};
    case AssetKind::ArmCape:
      return {{{-0.2, -0.3, -0.3}, {0.2, 0.3, 0.3}},
              {{-0.3, -0.4, -0.5}, {0.3, 0.4, 0.5}},
              {{-0.3, -0.4, -0.5}, {0.3, 0.4, 0.5}},
              {{-0.3, -0.4, -0.5}, {0.3, 0.4, 0.5}}};
    case AssetKind::QuadBlanket: {
      std::vector<Limits> l = {{{-0.1, -0.15, -0.1}, {0.1, 0.15, 0.1}},
                               {{-0.2, -0.2, -0.2}, {0.2, 0.2, 0.2}},
                               {{-0.2, -0.2, -0.2}, {0.2, 0.2, 0.2}},
                               {{-0.4, -0.4, -0.4}, {0.4, 0.4, 0.4}}};
      for (int leg = 0; leg < 4; ++leg) l.push_back({{-0.15, 0.0, -0.5}, {0.15, 0.0, 0.5}});
      l.push_back({{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}});
      return l;
    }
  }
  return {};
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

std::vector<std::vector<Pose>> sample_poses(const ClothAsset& asset, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw ValidationError("pose count must be >= 1");
  const Skeleton& sk = asset.rig.skeleton;
  const auto limits = joint_limits(asset.kind);
  if (limits.size() != sk.joint_count()) throw ValidationError("asset skeleton does not match its kind");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Pose>> clips;
  for (std::size_t start = 0; start < count; start += kFramesPerClip) {
    const std::size_t frames = std::min(kFramesPerClip, count - start);
    // per joint and axis: amplitude, angular rate (per frame), phase
    struct Wave {
      double c, w, phi;
    };
    std::vector<std::array<Wave, 3>> waves(sk.joint_count());
    for (std::size_t j = 0; j < sk.joint_count(); ++j)
      for (int a = 0; a < 3; ++a) {
        const double mag = std::max(std::abs(limits[j].lo[a]), std::abs(limits[j].hi[a]));
        waves[j][a].c = mag * (2.0 * uniform01(rng) - 1.0);
        waves[j][a].w = 2.0 * std::numbers::pi / (14.0 + 26.0 * uniform01(rng));
        waves[j][a].phi = 2.0 * std::numbers::pi * uniform01(rng);
      }
    std::vector<Pose> clip;
    clip.push_back(Pose::identity(sk.joint_count()));
    for (std::size_t f = 1; f < frames; ++f) {
      const double t = static_cast<double>(f);
      std::vector<Eigen::Matrix3d> rots;
      for (std::size_t j = 0; j < sk.joint_count(); ++j) {
        Vec3 ang;
        for (int a = 0; a < 3; ++a) {
          const auto& wv = waves[j][a];
          ang[a] = std::clamp(wv.c * (std::sin(wv.w * t + wv.phi) - std::sin(wv.phi)), limits[j].lo[a],
                              limits[j].hi[a]);
        }
        rots.push_back((Eigen::AngleAxisd(ang.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(ang.y(), Vec3::UnitY()) *
                        Eigen::AngleAxisd(ang.x(), Vec3::UnitX()))
                           .toRotationMatrix());
      }
      clip.push_back(center_pose(forward_kinematics(sk, rots, Vec3::Zero()), sk));
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

Dataset generate_dataset(const ClothAsset& asset, std::size_t pose_count, std::uint64_t seed,
                         const SimParams& params, std::size_t resolution) {
  const auto poses = sample_poses(asset, pose_count, seed);
  const std::size_t joints = asset.rig.skeleton.joint_count();
  const Pose bind = Pose::identity(joints);
  RelaxStats bind_stats;
  Mesh rest = relax_cloth(asset, bind, bind, asset.rig.cloth, params, &bind_stats);
  // Ground truth lives on the coordinate grid so its frequency split is exact.
  rest = rest.with_vertices(snap_to_grid(rest.vertices()));

  Dataset d;
  d.asset = asset.rig;
  d.clips.resize(poses.size());
  std::vector<std::vector<RelaxStats>> stats(poses.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t c = 0; c < poses.size(); ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%03zu", c);
    Clip& clip = d.clips[c];
    clip.name = name;
    clip.samples.push_back({poses[c][0], rest});
    stats[c].push_back(bind_stats);
    for (std::size_t f = 1; f < poses[c].size(); ++f) {
      RelaxStats st;
      Mesh next = relax_cloth(asset, poses[c][f - 1], poses[c][f], clip.samples.back().gt, params, &st);
      clip.samples.push_back({poses[c][f], next.with_vertices(snap_to_grid(next.vertices()))});
      stats[c].push_back(st);
    }
  }

  json unconverged = json::array();
  std::size_t total_iterations = 0;
  for (std::size_t c = 0; c < stats.size(); ++c)
    for (std::size_t f = 0; f < stats[c].size(); ++f) {
      total_iterations += stats[c][f].iterations;
      if (!stats[c][f].converged)
        unconverged.push_back({{"clip", d.clips[c].name}, {"frame", f}, {"residual", stats[c][f].max_residual}});
    }
  d.meta = {{"generator_version", kGeneratorVersion},
            {"seed", seed},
            {"asset_kind", to_string(asset.kind)},
            {"resolution", resolution},
            {"pose_count", pose_count},
            {"frames_per_clip", kFramesPerClip},
            {"params", params.to_json()},
            {"pinned", asset.pinned},
            {"relax_iterations", total_iterations},
            {"unconverged", std::move(unconverged)}};
  return d;
}

}  // namespace ctsn
