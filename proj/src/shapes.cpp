#include "hbeo/shapes.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "hbeo/error.hpp"

namespace hbeo {

namespace {

struct Jitter {
  std::mt19937_64 rng;
  explicit Jitter(std::uint64_t seed) : rng(seed) {}
  double operator()(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
};

TriangleMesh lid_box(Jitter& j) {
  const double w = j(0.8, 1.0), d = j(0.55, 0.75), h = j(0.35, 0.5), t = j(0.1, 0.13);
  const double hx = w / 2, hz = d / 2;
  TriangleMesh m;
  m.append(make_box({-hx, 0, -hz}, {hx, t, hz}));
  m.append(make_box({-hx, t, -hz}, {hx, h, -hz + t}));
  m.append(make_box({-hx, t, hz - t}, {hx, h, hz}));
  m.append(make_box({-hx, t, -hz + t}, {-hx + t, h, hz - t}));
  m.append(make_box({hx - t, t, -hz + t}, {hx, h, hz - t}));

  // Lid hinged on the back top edge; a small gap keeps it disjoint from the walls.
  const double gap = 0.01, open = j(70.0, 110.0) * std::numbers::pi / 180.0;
  TriangleMesh lid = make_box({-hx, 0, -d}, {hx, t, 0});
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(open, Eigen::Vector3d::UnitX()).toRotationMatrix();
  const Eigen::Vector3d hinge(0, h + gap, hz);
  for (auto& v : lid.vertices) v = rot * v + hinge;
  m.append(lid);
  return m;
}

TriangleMesh truncated_ellipsoid(Jitter& j) {
  const Eigen::Vector3d semi(j(0.45, 0.55), j(0.3, 0.38), j(0.2, 0.27));
  struct Plane {
    Eigen::Vector3d n;
    double offset;
  };
  const Plane cuts[2] = {{Eigen::Vector3d::UnitX(), semi.x() * j(0.35, 0.5)},
                         {-Eigen::Vector3d::UnitY(), semi.y() * j(0.3, 0.45)}};
  // Star-shaped about the origin, so a radial remap of the sphere stays closed.
  TriangleMesh m = make_uv_sphere(1.0, 24, 32);
  for (auto& v : m.vertices) {
    const Eigen::Vector3d u = v.normalized();
    double r = 1.0 / u.cwiseQuotient(semi).norm();
    for (const auto& c : cuts) {
      const double nu = c.n.dot(u);
      if (nu > 0) r = std::min(r, c.offset / nu);
    }
    v = r * u;
  }
  return m;
}

TriangleMesh l_bracket(Jitter& j) {
  const double long_arm = j(0.9, 1.0), short_arm = j(0.4, 0.55), t = j(0.14, 0.2), w = j(0.35, 0.5);
  TriangleMesh m;
  m.append(make_box({0, 0, 0}, {long_arm, t, w}));
  m.append(make_box({0, t, 0}, {t, short_arm, w}));
  return m;
}

}  // namespace

std::vector<std::string> procedural_class_names() { return {"lidbox", "ellipsoid", "lbracket"}; }

TriangleMesh make_procedural_shape(ShapeFamily family, std::uint64_t seed) {
  Jitter j(seed);
  TriangleMesh m;
  switch (family) {
    case ShapeFamily::kLidBox: m = lid_box(j); break;
    case ShapeFamily::kTruncatedEllipsoid: m = truncated_ellipsoid(j); break;
    case ShapeFamily::kLBracket: m = l_bracket(j); break;
    default: throw Error("unknown shape family");
  }
  normalize_to_unit_cube(m);
  return m;
}

}  // namespace hbeo
