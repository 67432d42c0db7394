#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "hbeo/depth.hpp"
#include "hbeo/edt.hpp"
#include "hbeo/error.hpp"
#include "hbeo/mesh.hpp"
#include "hbeo/observation.hpp"
#include "hbeo/rotation.hpp"
#include "hbeo/shapes.hpp"
#include "hbeo/voxel.hpp"

using namespace hbeo;
using hbeo::test::random_grid;
using hbeo::test::random_rotation;

namespace {

const char* kCubeOff = R"(OFF
# unit cube, quad faces
8 6 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
)";

std::vector<double> brute_force_edt(const VoxelGrid& g) {
  const int r = g.resolution();
  std::vector<double> out(g.size());
  for (int z = 0; z < r; ++z)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        long best = -1;
        for (int c = 0; c < r; ++c)
          for (int b = 0; b < r; ++b)
            for (int a = 0; a < r; ++a)
              if (g.at(a, b, c) > 0) {
                const long d = long(a - x) * (a - x) + long(b - y) * (b - y) + long(c - z) * (c - z);
                if (best < 0 || d < best) best = d;
              }
        out[g.index(x, y, z)] = std::sqrt(double(best));
      }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hbeo_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("load_off fan-triangulates quads and normalizes") {
  const auto m = load_off(kCubeOff);
  CHECK(m.vertices.size() == 8);
  CHECK(m.faces.size() == 12);
  for (const auto& v : m.vertices) CHECK(v.cwiseAbs().maxCoeff() <= 0.5);
  CHECK(is_watertight(m));
}

TEST_CASE("load_off rejects malformed input with line numbers") {
  auto line_of = [](const std::string& text) {
    try {
      load_off(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of("XOFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n") == 1);
  CHECK(line_of("OFF\n0 0 0\n") == 2);
  CHECK(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n") == 6);
  CHECK(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1\n") == 6);
  CHECK_THROWS_AS(load_off("OFF\n3 1 0\n0 0 0\n1 0 0\n"), ParseError);
}

TEST_CASE("normalized meshes fit the unit cube with unit max extent") {
  for (int f = 0; f < kShapeFamilies; ++f) {
    const auto m = make_procedural_shape(static_cast<ShapeFamily>(f), 11);
    Eigen::Vector3d lo = m.vertices.front(), hi = lo;
    for (const auto& v : m.vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    CHECK((hi - lo).maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hi.maxCoeff() <= 0.5 + 1e-12);
    CHECK(lo.minCoeff() >= -0.5 - 1e-12);
    CHECK(is_watertight(m));
  }
}

TEST_CASE("OFF text round-trips exactly") {
  const auto m = make_procedural_shape(ShapeFamily::kTruncatedEllipsoid, 5);
  const auto back = load_off(to_off(m), false);
  CHECK(back.vertices == m.vertices);
  CHECK(back.faces == m.faces);
}

TEST_CASE("voxelize: full cube fills the grid") {
  const auto g = voxelize(load_off(kCubeOff), 16);
  CHECK(g.occupied_count() == 4096);
  CHECK(g.binary());
}

TEST_CASE("voxelize: sphere matches the center-in-sphere oracle") {
  const auto mesh = make_uv_sphere(0.5, 64, 128);
  const auto g = voxelize(mesh, 16);
  std::size_t oracle = 0, mismatches = 0;
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const Eigen::Vector3d c(VoxelGrid::center_coord(x, 16), VoxelGrid::center_coord(y, 16),
                                VoxelGrid::center_coord(z, 16));
        const bool inside = c.norm() < 0.5;
        oracle += inside;
        mismatches += inside != (g.at(x, y, z) > 0);
      }
  CHECK(g.occupied_count() == oracle);
  CHECK(mismatches == 0);
}

TEST_CASE("voxelize: axis-aligned box matches the analytic test") {
  const Eigen::Vector3d lo(-0.5, -0.3, -0.2), hi(0.5, 0.3, 0.2);
  const auto g = voxelize(make_box(lo, hi), 16);
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const Eigen::Vector3d c(VoxelGrid::center_coord(x, 16), VoxelGrid::center_coord(y, 16),
                                VoxelGrid::center_coord(z, 16));
        const bool inside = (c.array() > lo.array()).all() && (c.array() < hi.array()).all();
        CHECK(inside == (g.at(x, y, z) > 0));
      }
}

TEST_CASE("voxelize matches the per-voxel reference on procedural shapes") {
  for (int f = 0; f < kShapeFamilies; ++f)
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto m = make_procedural_shape(static_cast<ShapeFamily>(f), seed);
      CHECK(voxelize(m, 16) == voxelize_reference(m, 16));
      CHECK(voxelize(m, 13, {SurfaceFill::kAlways}) == voxelize_reference(m, 13, {SurfaceFill::kAlways}));
    }
}

TEST_CASE("voxelize: open meshes rasterize through surface voxels") {
  TriangleMesh tri;
  tri.vertices = {{-0.5, -0.5, 0.0}, {0.5, -0.5, 0.0}, {-0.5, 0.5, 0.0}};
  tri.faces = {{0, 1, 2}};
  CHECK(voxelize(tri, 8).occupied_count() > 0);
  CHECK_THROWS_AS(voxelize(tri, 8, {SurfaceFill::kNever}), Error);
  CHECK_THROWS_AS(voxelize(TriangleMesh{}, 8), Error);
  CHECK_THROWS_AS(voxelize(tri, 1), Error);
}

TEST_CASE("resolution 30 gives a 27000-dimensional vector") {
  const auto g = voxelize(load_off(kCubeOff), 30);
  CHECK(g.size() == 27000);
}

TEST_CASE("render_depth: rotation by 2 pi is bitwise identical to identity") {
  const auto m = make_procedural_shape(ShapeFamily::kLidBox, 4);
  const Camera cam;
  const auto a = render_depth(m, Rotation::identity(), cam);
  for (const Eigen::Vector3d& axis : {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0.3, -0.4, 0.5).normalized()}) {
    const auto b = render_depth(m, Rotation(axis, 2 * std::numbers::pi), cam);
    CHECK(a.data() == b.data());
  }
}

TEST_CASE("render_depth: fronto-parallel square renders at constant depth") {
  TriangleMesh sq;
  sq.vertices = {{-0.3, -0.3, -0.1}, {0.3, -0.3, -0.1}, {0.3, 0.3, -0.1}, {-0.3, 0.3, -0.1}};
  sq.faces = {{0, 1, 2}, {0, 2, 3}};
  const auto img = render_depth(sq, Rotation::identity(), Camera{});
  const double z0 = 2.0 - 0.1;
  CHECK(img.object_pixels() > 100);
  for (float d : img.data())
    if (d > 0) CHECK(std::abs(d - z0) <= 1e-6);
}

TEST_CASE("render_depth: nearest vertex bounds the minimum depth") {
  std::mt19937_64 rng(5);
  const Camera cam;
  const double tol = 0.5 * std::sqrt(3.0) / 16;
  for (int t = 0; t < 12; ++t) {
    const auto m = make_procedural_shape(static_cast<ShapeFamily>(t % kShapeFamilies), 100 + t);
    const auto pose = random_rotation(rng);
    const auto img = render_depth(m, pose, cam);
    double nearest = 1e9, rendered = 1e9;
    for (const auto& v : m.vertices) nearest = std::min(nearest, (pose.matrix() * v).z() + cam.distance);
    for (float d : img.data())
      if (d > 0) rendered = std::min(rendered, double(d));
    CHECK(rendered >= nearest - 1e-6);
    CHECK(rendered <= nearest + tol);
  }
}

TEST_CASE("render_depth: object outside the frustum is an empty render") {
  auto m = make_procedural_shape(ShapeFamily::kLBracket, 1);
  for (auto& v : m.vertices) v.x() += 50.0;
  CHECK_THROWS_WITH_AS(render_depth(m, Rotation::identity(), Camera{}), doctest::Contains("empty render"), Error);
}

TEST_CASE("depth PGM round-trips within one quantization step") {
  const auto dir = temp_dir("pgm");
  const auto m = make_procedural_shape(ShapeFamily::kTruncatedEllipsoid, 2);
  const Camera cam;
  const auto img = render_depth(m, Rotation(Eigen::Vector3d(0.2, 0.4, -0.1)), cam);
  const auto path = (dir / "d.pgm").string();
  save_depth_pgm(path, img, cam);
  DepthFileInfo info;
  const auto back = load_depth_pgm(path, &info);
  CHECK(info.camera == cam);
  const double q = depth_quantum(info.depth_min, info.depth_max);
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    CHECK((img.data()[i] > 0) == (back.data()[i] > 0));
    CHECK(std::abs(img.data()[i] - back.data()[i]) <= q);
  }
  CHECK(quantize_depth(img) == back);
}

TEST_CASE("carve: all-background image is rejected") {
  CHECK_THROWS_AS(carve_partial_observation(DepthImage(64, 48), Rotation::identity(), Camera{}, 16), Error);
}

TEST_CASE("carve: frontal view of a solid cube") {
  const auto cube = load_off(kCubeOff);
  const Camera cam;
  const auto img = render_depth(cube, Rotation::identity(), cam);
  const auto obs = carve_partial_observation(img, Rotation::identity(), cam, 16);
  obs.validate();
  VoxelGrid filled(16), known(16);
  for (std::size_t i = 0; i < obs.known_count(); ++i) {
    known.values()[obs.known_indices[i]] = 1;
    filled.values()[obs.known_indices[i]] = obs.known_values[i];
  }
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      bool column_hit = false;
      for (int z = 0; z < 16; ++z) column_hit |= filled.at(x, y, z) > 0;
      CHECK(column_hit);
      // The camera looks along +z, so layers past the front one are hidden.
      for (int z = 1; z < 16; ++z) CHECK(known.at(x, y, z) == 0);
    }
}

TEST_CASE("carve: rendered sphere agrees with its voxelization on known voxels") {
  const auto sphere = make_uv_sphere(0.5, 32, 64);
  const Camera cam;
  const auto truth = voxelize(sphere, 16);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 4; ++t) {
    const auto pose = random_rotation(rng);
    const auto obs = carve_partial_observation(render_depth(sphere, pose, cam), pose, cam, 16);
    obs.validate();
    std::size_t agree = 0;
    for (std::size_t i = 0; i < obs.known_count(); ++i) agree += truth.values()[obs.known_indices[i]] == obs.known_values[i];
    CHECK(double(agree) / double(obs.known_count()) >= 0.95);
  }
}

TEST_CASE("carve: each voxel is labeled at most once and indices are sorted") {
  const Camera cam;
  std::mt19937_64 rng(2);
  for (int f = 0; f < kShapeFamilies; ++f) {
    const auto m = make_procedural_shape(static_cast<ShapeFamily>(f), 7);
    const auto pose = random_rotation(rng, 2.5);
    const auto obs = carve_partial_observation(render_depth(m, pose, cam), pose, cam, 16);
    CHECK_NOTHROW(obs.validate());
    CHECK(std::adjacent_find(obs.known_indices.begin(), obs.known_indices.end(),
                             [](auto a, auto b) { return a >= b; }) == obs.known_indices.end());
    CHECK(obs.known_count() <= obs.grid_size());
    CHECK(obs.known_values.size() == obs.known_count());
  }
}

TEST_CASE("edt: analytic cases") {
  VoxelGrid full(4);
  for (auto& v : full.values()) v = 1;
  for (double d : edt(full).distances) CHECK(d == 0.0);

  VoxelGrid one(4);
  one.set(0, 0, 0, 1);
  CHECK(edt(one).distances[one.index(3, 3, 3)] == std::sqrt(27.0));
  CHECK_THROWS_AS(edt(VoxelGrid(4)), Error);
}

TEST_CASE("edt equals brute force exactly on random 8^3 grids") {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 200; ++t) {
    const double p = 0.002 + 0.3 * double(t % 10) / 10.0;
    auto g = random_grid(rng, 8, p);
    if (g.occupied_count() == 0) g.set(t % 8, (t / 8) % 8, 3, 1);
    const auto ref = brute_force_edt(g);
    const auto par = edt(g), ser = edt_serial(g);
    REQUIRE(par.distances.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(par.distances[i] == ref[i]);
      CHECK(ser.distances[i] == ref[i]);
    }
  }
}

TEST_CASE("edt: zero exactly on occupied voxels and 1-Lipschitz") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto g = random_grid(rng, 12, 0.02);
    g.set(5, 5, 5, 1);
    const auto f = edt(g);
    const int r = 12;
    for (int z = 0; z < r; ++z)
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
          const double d = f.distances[g.index(x, y, z)];
          CHECK((d == 0.0) == (g.at(x, y, z) > 0));
          if (x + 1 < r) CHECK(std::abs(d - f.distances[g.index(x + 1, y, z)]) <= 1.0 + 1e-12);
          if (x + 1 < r && y + 1 < r && z + 1 < r)
            CHECK(std::abs(d - f.distances[g.index(x + 1, y + 1, z + 1)]) <= std::sqrt(3.0) + 1e-12);
        }
  }
}

TEST_CASE("rotate_grid: identity, hand-computed quarter turn, round trip") {
  std::mt19937_64 rng(8);
  const auto g = random_grid(rng, 9, 0.3);
  CHECK(rotate_grid(g, Rotation::identity()) == g);

  VoxelGrid point(15);
  point.set(14, 7, 7, 1);
  const auto turned = rotate_grid(point, Rotation(Eigen::Vector3d::UnitZ(), std::numbers::pi / 2));
  CHECK(turned.occupied_count() == 1);
  CHECK(turned.at(7, 14, 7) == 1);

  // Solid families only: the lid box has one-voxel walls that nearest-neighbor resampling erodes.
  for (int t = 0; t < 10; ++t) {
    const auto family = t % 2 ? ShapeFamily::kLBracket : ShapeFamily::kTruncatedEllipsoid;
    const auto solid = voxelize(make_procedural_shape(family, 30 + t), 16);
    const auto q = random_rotation(rng);
    const auto back = rotate_grid(rotate_grid(solid, q), q.inverse());
    CHECK(intersection_over_union(solid, back) >= 0.8);
  }
}

TEST_CASE("geodesic_angle: fixed cases and quaternion oracle") {
  CHECK(geodesic_angle(Rotation::identity(), Rotation::identity()) == 0.0);
  CHECK(geodesic_angle(Rotation::identity(), Rotation(Eigen::Vector3d::UnitZ(), std::numbers::pi)) ==
        doctest::Approx(std::numbers::pi).epsilon(1e-15));
  std::mt19937_64 rng(1000);
  for (int t = 0; t < 1000; ++t) {
    const auto a = random_rotation(rng), b = random_rotation(rng);
    const double dot = std::abs(a.quaternion().coeffs().dot(b.quaternion().coeffs()));
    const double oracle = 2.0 * std::acos(std::min(1.0, dot));
    const double g = geodesic_angle(a, b);
    CHECK(std::abs(g - oracle) < 1e-9);
    CHECK(g >= 0.0);
    CHECK(g <= std::numbers::pi);
    CHECK(g == doctest::Approx(geodesic_angle(b, a)).epsilon(1e-12));
    // Negated axis with negated angle is the same rotation.
    const Eigen::Vector3d axis = a.axis_angle().normalized();
    CHECK(geodesic_angle(Rotation(-axis, -a.angle()), b) == doctest::Approx(g).epsilon(1e-12));
    CHECK(geodesic_angle(a, a) < 1e-7);
  }
}

TEST_CASE("rotation canonical form keeps the angle in [0, pi]") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    std::uniform_real_distribution<double> u(-20, 20);
    const Rotation q(Eigen::Vector3d(u(rng), u(rng), u(rng)));
    const auto c = q.canonical();
    CHECK(c.angle() <= std::numbers::pi + 1e-12);
    CHECK(geodesic_angle(q, c) < 1e-7);
  }
}

TEST_CASE("HBVX container round-trips and rejects damage") {
  std::mt19937_64 rng(6);
  const auto g = random_grid(rng, 10, 0.4);
  CHECK(decode_grid(encode_grid(g)) == g);
  VoxelGrid soft(4, std::vector<float>(64, 0.25f), false);
  CHECK(decode_grid(encode_grid(soft)) == soft);
  auto bytes = encode_grid(g);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_grid(bytes), FormatError);
  auto truncated = encode_grid(g);
  truncated.pop_back();
  CHECK_THROWS_AS(decode_grid(truncated), FormatError);
  CHECK_THROWS_AS(VoxelGrid(3, std::vector<float>(26, 0.0f), true), Error);
  CHECK_THROWS_AS(VoxelGrid(2, std::vector<float>(8, 0.5f), true), Error);
}

TEST_CASE("grid_to_ply emits the six faces of an isolated voxel") {
  VoxelGrid g(3);
  g.set(1, 1, 1, 1);
  const auto ply = grid_to_ply(g);
  CHECK(ply.find("element face 6") != std::string::npos);
  CHECK(ply.rfind("ply", 0) == 0);
}
