#pragma once

#include <random>

#include <Eigen/Core>
#include <Eigen/QR>

#include "hbeo/rotation.hpp"
#include "hbeo/voxel.hpp"

namespace hbeo::test {

inline Rotation random_rotation(std::mt19937_64& rng, double max_angle = 3.14159265358979) {
  std::normal_distribution<double> n01;
  Eigen::Vector3d axis(n01(rng), n01(rng), n01(rng));
  std::uniform_real_distribution<double> u(0.0, max_angle);
  return Rotation(axis.normalized() * u(rng));
}

inline VoxelGrid random_grid(std::mt19937_64& rng, int r, double p) {
  std::bernoulli_distribution b(p);
  VoxelGrid g(r);
  for (auto& v : g.values()) v = b(rng) ? 1.0f : 0.0f;
  return g;
}

inline Eigen::MatrixXd random_orthonormal(std::mt19937_64& rng, int d, int k) {
  std::normal_distribution<double> n01;
  Eigen::MatrixXd a(d, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n01(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
}

}  // namespace hbeo::test
