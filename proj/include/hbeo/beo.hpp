#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "hbeo/observation.hpp"
#include "hbeo/rotation.hpp"
#include "hbeo/subspace.hpp"

namespace hbeo {

/// Diagonal-covariance Gaussian mixture over subspace coefficients of one class.
struct ClassGMM {
  struct Component {
    double weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
  };
  int class_id = 0;
  std::vector<Component> components;
  double covariance_floor = 0.0;

  int dimension() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }
  void validate() const;
};

struct GmmFitOptions {
  int n_components = 2;
  double covariance_floor = 0.0;  // <= 0 selects 1e-6 * mean per-dimension data variance
  int max_iters = 200;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
};

/// EM with k-means++ seeding; variances clamped to the floor every M-step.
/// Identical points collapse to one floored component.
ClassGMM fit_class_gmm(const std::vector<Eigen::VectorXd>& projections, const GmmFitOptions& opts, int class_id = 0);

/// log D(c) via log-sum-exp over components.
double log_density(const ClassGMM& gmm, const Eigen::VectorXd& coeffs);

struct PriorConfig {
  std::vector<double> class_priors;     // one per class
  std::vector<double> rotation_priors;  // empty = uniform over candidates

  static PriorConfig uniform(std::size_t classes);
  /// True when each prior sums to 1 within 1e-9.
  bool normalized() const;
  /// Entries must be finite and non-negative with positive mass. Unnormalized
  /// priors are accepted: the posterior's denominator absorbs the scale.
  void validate(std::size_t classes, std::size_t rotations) const;
};

struct PoseSearchConfig {
  std::vector<Rotation> candidates;
  bool parallel = true;

  /// Icosahedral directions (10 * 4^level + 2 after subdivision) times
  /// `angle_bins` in-plane rotations; covers SO(3).
  static PoseSearchConfig three_dof(int icosphere_level, int angle_bins);
  /// `bins` rotations about `axis`.
  static PoseSearchConfig one_dof(const Eigen::Vector3d& axis, int bins);
};

/// Unit directions of a subdivided icosahedron (12, 42, 162, ... vertices).
std::vector<Eigen::Vector3d> icosphere_directions(int level);

using ObservationProducer = std::function<PartialObservation(const Rotation&)>;

struct PoseSearchResult {
  std::size_t class_index = 0;
  std::size_t rotation_index = 0;
  Rotation rotation;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd log_joint;  // rotations x classes; -inf where a candidate failed
  Eigen::MatrixXd posterior;  // normalized over the whole grid
  std::size_t failed_candidates = 0;
};

/// Joint class/pose estimate by exhaustive search over candidate rotations:
/// argmax over (r, c) of P(r) D(o'^r | c) P(c), with the full normalized table.
/// Ties resolve to the lowest (class, rotation) indices.
PoseSearchResult classify_pose_search(const ObservationProducer& producer, const SharedBasis& basis,
                                      const std::vector<ClassGMM>& gmms, const PriorConfig& priors,
                                      const PoseSearchConfig& search, const SolverConfig& solver = {});

}  // namespace hbeo
