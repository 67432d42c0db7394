#pragma once

// Low-level predicates shared by the voxelizer and the rasterizer.

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace hbeo::detail {

inline double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Triangle projected onto the (y, z) plane with a symbolic-perturbation fill
// rule: a query point exactly on a shared edge or vertex is claimed by exactly
// one of the triangles around it, as if it were nudged by (+1, +eps).
class ProjectedTriangle {
 public:
  ProjectedTriangle() = default;
  ProjectedTriangle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
    p_[0][0] = a.y(), p_[0][1] = a.z();
    p_[1][0] = b.y(), p_[1][1] = b.z();
    p_[2][0] = c.y(), p_[2][1] = c.z();
    const double area = cross2(p_[1][0] - p_[0][0], p_[1][1] - p_[0][1], p_[2][0] - p_[0][0], p_[2][1] - p_[0][1]);
    valid_ = area != 0.0 && std::isfinite(area);
    if (area < 0) {
      std::swap(p_[1][0], p_[2][0]);
      std::swap(p_[1][1], p_[2][1]);
    }
  }

  bool valid() const { return valid_; }

  bool covers(double y, double z) const {
    for (int e = 0; e < 3; ++e) {
      const double* p0 = p_[e];
      const double* p1 = p_[(e + 1) % 3];
      // Evaluate from the lexicographically smaller endpoint so the two
      // triangles sharing this edge see bit-identical magnitudes.
      const bool forward = p0[0] < p1[0] || (p0[0] == p1[0] && p0[1] < p1[1]);
      const double* u = forward ? p0 : p1;
      const double* v = forward ? p1 : p0;
      double s = cross2(v[0] - u[0], v[1] - u[1], y - u[0], z - u[1]);
      if (!forward) s = -s;
      if (s > 0) continue;
      if (s < 0) return false;
      const double dy = p1[0] - p0[0], dz = p1[1] - p0[1];
      const bool owned = dz < 0 || (dz == 0 && dy > 0);
      if (!owned) return false;
    }
    return true;
  }

 private:
  double p_[3][2] = {};
  bool valid_ = false;
};

// x coordinate where the +x ray through (y, z) meets the triangle's plane.
inline double ray_x_crossing(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c, double y,
                             double z) {
  const Eigen::Vector3d n = (b - a).cross(c - a);
  return a.x() - (n.y() * (y - a.y()) + n.z() * (z - a.z())) / n.x();
}

// Squared distance from p to triangle abc (closest-point by Voronoi regions).
inline double point_triangle_distance_sq(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                         const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.squaredNorm();
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.squaredNorm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).squaredNorm();
  }
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.squaredNorm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).squaredNorm();
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).squaredNorm();
  }
  const double denom = va + vb + vc;
  if (denom == 0) {
    // Degenerate triangle: fall back to the closest edge.
    auto seg = [&](const Eigen::Vector3d& s0, const Eigen::Vector3d& s1) {
      const Eigen::Vector3d d = s1 - s0;
      const double len2 = d.squaredNorm();
      const double t = len2 > 0 ? std::clamp((p - s0).dot(d) / len2, 0.0, 1.0) : 0.0;
      return (p - (s0 + t * d)).squaredNorm();
    };
    return std::min({seg(a, b), seg(b, c), seg(c, a)});
  }
  const double v = vb / denom, w = vc / denom;
  return (p - (a + ab * v + ac * w)).squaredNorm();
}

}  // namespace hbeo::detail
