#include "ctsn/datagen.hpp"
#include "ctsn/spatial.hpp"
#include "helpers.hpp"

#include <doctest.h>

using namespace ctsn;

namespace {

KdTree::Hit brute_nearest(const Positions& pts, const Vec3& q) {
  KdTree::Hit best{0, std::numeric_limits<double>::infinity()};
  double best_d2 = best.distance;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = {i, std::sqrt(d2)};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("kd-tree matches brute force") {
  std::mt19937_64 rng(11);
  const Positions pts = test::random_points(2000, 1.0, rng);
  const KdTree tree(pts);
  CHECK(tree.size() == 2000);
  for (const auto& q : test::random_points(1000, 1.3, rng)) {
    const auto a = tree.nearest(q);
    const auto b = brute_nearest(pts, q);
    CHECK(a.index == b.index);
    CHECK(a.distance == b.distance);
  }
}

TEST_CASE("kd-tree ties go to the lowest index") {
  Positions pts{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {1, 0, 0}};
  const KdTree tree(pts);
  CHECK(tree.nearest(Vec3::Zero()).index == 0);
  CHECK(tree.nearest(Vec3(2, 0, 0)).index == 0);
}

TEST_CASE("kd-tree on a lattice with many ties") {
  Positions pts;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 6; ++y)
      for (int z = 0; z < 6; ++z) pts.emplace_back(x, y, z);
  const KdTree tree(pts);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 300; ++t) {
    std::uniform_int_distribution<int> u(-2, 12);
    const Vec3 q(u(rng) * 0.5, u(rng) * 0.5, u(rng) * 0.5);
    CHECK(tree.nearest(q).index == brute_nearest(pts, q).index);
  }
}

TEST_CASE("closest point on a triangle") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  auto at = [&](const Vec3& w) { return w[0] * a + w[1] * b + w[2] * c; };
  CHECK((at(closest_point_barycentric({0.2, 0.2, 1.0}, a, b, c)) - Vec3(0.2, 0.2, 0)).norm() < 1e-15);
  CHECK((at(closest_point_barycentric({-1, -1, 0}, a, b, c)) - a).norm() < 1e-15);
  CHECK((at(closest_point_barycentric({2, -1, 0}, a, b, c)) - b).norm() < 1e-15);
  CHECK((at(closest_point_barycentric({0.5, -1, 0}, a, b, c)) - Vec3(0.5, 0, 0)).norm() < 1e-15);
  CHECK((at(closest_point_barycentric({1, 1, 0}, a, b, c)) - Vec3(0.5, 0.5, 0)).norm() < 1e-15);
}

TEST_CASE("surface index matches a brute-force scan") {
  const ClothAsset asset = make_asset(AssetKind::TubeSkirtBiped, 8, 0);
  const SurfaceIndex index(asset.rig.body);
  const auto b = bounding_box(asset.rig.body.vertices());
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(b.min.x() - 0.1, b.max.x() + 0.1), uy(b.min.y() - 0.1, b.max.y() + 0.1),
      uz(b.min.z() - 0.1, b.max.z() + 0.1);
  Positions qs;
  for (int t = 0; t < 1000; ++t) qs.emplace_back(ux(rng), uy(rng), uz(rng));
  const auto batch = index.closest(qs, true);
  const auto serial = index.closest(qs, false);
  for (std::size_t t = 0; t < qs.size(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t tri = 0;
    for (std::size_t f = 0; f < asset.rig.body.triangle_count(); ++f) {
      const double d = (index.evaluate(qs[t], f).point - qs[t]).squaredNorm();
      if (d < best) {
        best = d;
        tri = f;
      }
    }
    const SurfacePoint ref = index.evaluate(qs[t], tri);
    CHECK(batch[t].triangle == tri);
    CHECK((batch[t].point - ref.point).norm() < 1e-9);
    CHECK(batch[t].inside == ref.inside);
    CHECK(serial[t].triangle == batch[t].triangle);
    CHECK(serial[t].point == batch[t].point);
  }
}

TEST_CASE("inside flag and distance for a closed capsule") {
  const Mesh cap = make_capsule({0, 0, 0}, {0, 1, 0}, 0.2, 16, 6);
  const SurfaceIndex index(cap);
  const auto in = index.closest(Vec3(0, 0.5, 0));
  CHECK(in.inside);
  CHECK(in.distance == doctest::Approx(0.2).epsilon(0.03));
  const auto out = index.closest(Vec3(0.5, 0.5, 0));
  CHECK_FALSE(out.inside);
  CHECK(out.distance == doctest::Approx(0.3).epsilon(0.03));
  CHECK(out.normal.x() > 0.9);
}

TEST_CASE("binding picks the nearest body vertex") {
  const ClothAsset asset = make_asset(AssetKind::ArmCape, 6, 1);
  const Binding b = bind_cloth_to_body(asset.rig.cloth, asset.rig.body);
  for (std::size_t i = 0; i < b.size(); ++i)
    CHECK(b[i] == brute_nearest(asset.rig.body.vertices(), asset.rig.cloth.vertices()[i]).index);
}
