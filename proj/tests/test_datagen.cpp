#include "ctsn/datagen.hpp"
#include "ctsn/errors.hpp"
#include "ctsn/postprocess.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ctsn;
namespace fs = std::filesystem;

TEST_CASE("asset kinds parse and print") {
  for (auto k : {AssetKind::ArmCape, AssetKind::TubeSkirtBiped, AssetKind::QuadBlanket})
    CHECK(parse_asset_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_asset_kind("cape"), ValidationError);
  CHECK_THROWS_AS(make_asset(AssetKind::ArmCape, 3, 0), ValidationError);
}

TEST_CASE("procedural assets are consistent and deterministic") {
  for (auto k : {AssetKind::ArmCape, AssetKind::TubeSkirtBiped, AssetKind::QuadBlanket}) {
    const ClothAsset a = make_asset(k, 8, 5);
    CHECK(a.rig.cloth.vertex_count() == 64);
    CHECK(a.rig.cloth_weights_init.rows() == 64);
    CHECK(a.rig.body_weights.rows() == a.rig.body.vertex_count());
    CHECK(a.rig.body_weights.cols() == a.rig.skeleton.joint_count());
    CHECK_FALSE(a.pinned.empty());
    CHECK(std::is_sorted(a.pinned.begin(), a.pinned.end()));
    // the cloth starts outside the body
    CHECK(detect_penetrations(a.rig.cloth, a.rig.body).empty());
    const ClothAsset b = make_asset(k, 8, 5);
    CHECK(b.rig.cloth.vertices() == a.rig.cloth.vertices());
    CHECK(b.rig.body.vertices() == a.rig.body.vertices());
  }
}

TEST_CASE("capsule is closed with outward normals") {
  const Mesh c = make_capsule({0, 0, 0}, {0, 1, 0}, 0.3, 12, 4);
  // closed: every edge is shared by exactly two triangles
  std::map<Edge, int> uses;
  for (const auto& t : c.triangles())
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  for (const auto& [e, n] : uses) CHECK(n == 2);
  const auto normals = vertex_normals(c);
  for (std::size_t i = 0; i < c.vertex_count(); ++i) {
    Vec3 axis_point(0, std::clamp(c.vertices()[i].y(), 0.0, 1.0), 0);
    CHECK(normals[i].dot(c.vertices()[i] - axis_point) > 0.0);
  }
}

TEST_CASE("spring energy gradient matches finite differences") {
  const ClothAsset a = make_asset(AssetKind::QuadBlanket, 6, 2);
  const ClothSystem sys(a.rig.cloth, a.pinned, SimParams{});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  Positions x = a.rig.cloth.vertices();
  for (auto& p : x) p += Vec3(u(rng), u(rng), u(rng));
  Positions g;
  sys.gradient(x, g);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (sys.pinned(i)) {
      CHECK(g[i].norm() == 0.0);
      continue;
    }
    for (int c = 0; c < 3; ++c) {
      const double h = 1e-6;
      Positions xp = x, xm = x;
      xp[i][c] += h;
      xm[i][c] -= h;
      const double fd = (sys.energy(xp) - sys.energy(xm)) / (2 * h);
      CHECK(g[i][c] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
  }
  CHECK(sys.spring_count() > a.rig.cloth.edges().size());
}

TEST_CASE("sim params round trip through json") {
  SimParams p;
  p.bend = 3.5;
  p.substeps = 5;
  const SimParams q = SimParams::from_json(p.to_json());
  CHECK(q.bend == 3.5);
  CHECK(q.substeps == 5);
  CHECK(q.gravity == p.gravity);
}

TEST_CASE("pose interpolation hits its endpoints") {
  const ClothAsset a = make_asset(AssetKind::TubeSkirtBiped, 6, 0);
  const auto clips = sample_poses(a, 32, 3);
  REQUIRE(clips.size() == 2);
  CHECK(clips[0].size() == kFramesPerClip);
  for (const auto& t : clips[0][0].transforms) CHECK(t == identity_affine());
  const Pose& p = clips[0][3];
  const Pose& q = clips[0][4];
  const Pose a0 = interpolate_pose(p, q, 0.0), a1 = interpolate_pose(p, q, 1.0);
  for (std::size_t j = 0; j < p.transforms.size(); ++j) {
    CHECK((a0.transforms[j] - p.transforms[j]).norm() < 1e-12);
    CHECK((a1.transforms[j] - q.transforms[j]).norm() < 1e-12);
  }
  // hip translation is removed
  for (const auto& clip : clips)
    for (const auto& pose : clip) CHECK(pose.transforms[a.rig.skeleton.hip_index()].col(3).norm() < 1e-12);
  CHECK(sample_poses(a, 32, 3)[1][7].transforms == clips[1][7].transforms);
}

TEST_CASE("relaxation lowers the energy and keeps pins and clearance") {
  const ClothAsset a = make_asset(AssetKind::TubeSkirtBiped, 8, 1);
  const auto clips = sample_poses(a, 16, 2);
  SimParams params;
  params.substeps = 2;
  const Pose bind = Pose::identity(a.rig.skeleton.joint_count());
  RelaxStats st;
  st.record_trace = true;
  const Mesh rest = relax_cloth(a, bind, bind, a.rig.cloth, params, &st);
  CHECK(st.final_energy <= st.initial_energy);
  for (const auto& trace : st.energy_trace)
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-12);

  const Mesh moved = relax_cloth(a, bind, clips[0][5], rest, params, &st);
  const Positions skinned = lbs_skin(a.rig.cloth.vertices(), clips[0][5], a.rig.cloth_weights_init);
  for (auto i : a.pinned) CHECK((moved.vertices()[i] - skinned[i]).norm() < 1e-12);
  const Mesh posed_body = a.rig.body.with_vertices(lbs_skin(a.rig.body.vertices(), clips[0][5], a.rig.body_weights));
  CHECK(detect_penetrations(moved, posed_body).empty());
}

TEST_CASE("small dataset generation is deterministic and round trips") {
  const ClothAsset a = make_asset(AssetKind::QuadBlanket, 5, 4);
  SimParams params;
  params.substeps = 2;
  const Dataset d = generate_dataset(a, 16, 9, params, 5);
  CHECK(d.sample_count() == 16);
  CHECK(d.meta["seed"] == 9);
  const Dataset e = generate_dataset(a, 16, 9, params, 5);
  for (const auto& smp : d.clips[0].samples) {
    const FrequencySplit f = frequency_decompose(smp.gt, 0.5, 20);
    for (std::size_t i = 0; i < smp.gt.vertex_count(); ++i) CHECK(f.low.vertices()[i] + f.high[i] == smp.gt.vertices()[i]);
  }
  for (std::size_t f = 0; f < 16; ++f) CHECK(e.clips[0].samples[f].gt.vertices() == d.clips[0].samples[f].gt.vertices());

  const fs::path dir = fs::temp_directory_path() / "ctsn_test_dataset";
  fs::remove_all(dir);
  save_dataset(d, dir);
  const Dataset r = load_dataset(dir);
  REQUIRE(r.sample_count() == 16);
  CHECK(r.clips[0].name == d.clips[0].name);
  for (std::size_t f = 0; f < 16; ++f) {
    CHECK(r.clips[0].samples[f].gt.vertices() == d.clips[0].samples[f].gt.vertices());
    CHECK(r.clips[0].samples[f].pose.transforms == d.clips[0].samples[f].pose.transforms);
  }
  CHECK(r.meta == d.meta);
  fs::remove_all(dir);
}
