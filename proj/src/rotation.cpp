#include "hbeo/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hbeo {

Rotation::Rotation(const Eigen::Vector3d& axis, double angle) {
  const double n = axis.norm();
  axis_angle_ = n > 0 ? Eigen::Vector3d(axis / n * angle) : Eigen::Vector3d::Zero();
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double s = v.norm();
  if (s == 0) return Rotation();
  const double angle = 2.0 * std::atan2(s, q.w());
  return Rotation(Eigen::Vector3d(v / s * angle));
}

Rotation Rotation::from_matrix(const Eigen::Matrix3d& m) {
  return from_quaternion(Eigen::Quaterniond(m));
}

Eigen::Quaterniond Rotation::quaternion() const {
  const double angle = axis_angle_.norm();
  if (angle == 0) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis_angle_ / angle));
}

Eigen::Matrix3d Rotation::matrix() const {
  const double angle = axis_angle_.norm();
  if (angle == 0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis_angle_ / angle).toRotationMatrix();
}

Rotation Rotation::canonical() const {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double angle = axis_angle_.norm();
  if (angle == 0) return Rotation();
  const Eigen::Vector3d axis = axis_angle_ / angle;
  angle = std::fmod(angle, two_pi);
  if (angle <= std::numbers::pi) return Rotation(Eigen::Vector3d(axis * angle));
  return Rotation(Eigen::Vector3d(-axis * (two_pi - angle)));
}

Rotation Rotation::operator*(const Rotation& first) const {
  return from_quaternion(quaternion() * first.quaternion());
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond rel = a.quaternion().conjugate() * b.quaternion();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

}  // namespace hbeo
