#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace hbeo {

/// Rotation stored as an axis-angle 3-vector: direction is the axis, norm the
/// angle in radians. Canonical form keeps the angle in [0, pi].
class Rotation {
 public:
  Rotation() : axis_angle_(Eigen::Vector3d::Zero()) {}
  explicit Rotation(const Eigen::Vector3d& axis_angle) : axis_angle_(axis_angle) {}
  Rotation(const Eigen::Vector3d& axis, double angle);

  static Rotation identity() { return Rotation(); }
  static Rotation from_matrix(const Eigen::Matrix3d& m);
  static Rotation from_quaternion(const Eigen::Quaterniond& q);

  const Eigen::Vector3d& axis_angle() const { return axis_angle_; }
  double angle() const { return axis_angle_.norm(); }

  Eigen::Matrix3d matrix() const;
  Eigen::Quaterniond quaternion() const;

  /// Same rotation with angle reduced into [0, pi] (axis flipped when needed).
  Rotation canonical() const;
  Rotation inverse() const { return Rotation(-axis_angle_); }

  /// (*this) applied after `first`.
  Rotation operator*(const Rotation& first) const;

  bool operator==(const Rotation& o) const { return axis_angle_ == o.axis_angle_; }

 private:
  Eigen::Vector3d axis_angle_;
};

/// Angle of the relative rotation a^-1 * b, in [0, pi].
double geodesic_angle(const Rotation& a, const Rotation& b);

}  // namespace hbeo
