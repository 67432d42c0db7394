#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "hbeo/observation.hpp"
#include "hbeo/voxel.hpp"

namespace hbeo {

struct VBPCAConfig {
  double variance_target = 0.6;  // fraction of total variance the retained components must capture
  int max_components = 30;
  int em_max_iters = 300;
  double em_rel_tolerance = 1e-7;
  // Zero-mean Gaussian priors on the basis entries and the mean.
  double basis_prior_variance = 1.0;
  double mean_prior_variance = 1.0;

  void validate() const;
};

/// One class's learned linear subspace, x ~ W c + mu + noise.
struct ClassSubspace {
  int class_id = 0;
  Eigen::MatrixXd basis;         // d x k
  Eigen::VectorXd mean;          // d
  double noise_variance = 0.0;
  Eigen::MatrixXd coefficients;  // k x n posterior means, centered over the training set
  double captured_variance = 0.0;        // fraction captured by the k retained directions
  std::vector<double> objective_history;  // negative log posterior per EM iteration (final run)

  int dimension() const { return static_cast<int>(basis.rows()); }
  int components() const { return static_cast<int>(basis.cols()); }
};

/// MAP-regularized PPCA fitted by EM. `data` holds one sample per column.
/// The component count is the smallest capturing `variance_target`.
ClassSubspace fit_class_subspace(const Eigen::MatrixXd& data, const VBPCAConfig& cfg, int class_id = 0);
ClassSubspace fit_class_subspace(const std::vector<VoxelGrid>& grids, const VBPCAConfig& cfg, int class_id = 0);

/// Negative log posterior (up to a constant) of the PPCA model with priors.
double ppca_objective(const Eigen::MatrixXd& data, const Eigen::MatrixXd& basis, const Eigen::VectorXd& mean,
                      double noise_variance, const VBPCAConfig& cfg);

/// Shared orthonormal basis spanning every class basis and class mean.
/// Immutable after construction; safe for concurrent use.
class SharedBasis {
 public:
  SharedBasis() = default;
  SharedBasis(Eigen::MatrixXd w, int resolution, std::vector<int> class_ids);

  const Eigen::MatrixXd& matrix() const { return w_; }
  int dimension() const { return static_cast<int>(w_.rows()); }
  int rank() const { return static_cast<int>(w_.cols()); }
  int resolution() const { return resolution_; }
  const std::vector<int>& class_ids() const { return class_ids_; }

  /// max |W^T W - I|.
  double orthonormality_error() const;

 private:
  Eigen::MatrixXd w_;
  int resolution_ = 0;
  std::vector<int> class_ids_;
};

constexpr double kOrthonormalityTolerance = 1e-6;
constexpr double kRankCutoff = 1e-10;
constexpr float kBinarizeThreshold = 0.5f;

SharedBasis build_shared_basis(const std::vector<ClassSubspace>& subspaces, int resolution);

Eigen::VectorXd project(const Eigen::VectorXd& object, const SharedBasis& basis);
Eigen::VectorXd project(const VoxelGrid& grid, const SharedBasis& basis);

/// W c; thresholded at 0.5 when `binarize`.
VoxelGrid back_project(const Eigen::VectorXd& coeffs, const SharedBasis& basis, bool binarize);

struct PartialError {
  double error = 0.0;
  Eigen::VectorXd gradient;
};

/// ||V W c - w||^2 and its gradient 2 W^T V^T (V W c - w); V realized by gathering.
PartialError partial_error_and_gradient(const Eigen::VectorXd& coeffs, const PartialObservation& obs,
                                        const SharedBasis& basis);

struct SolverConfig {
  double lasso_lambda = 0.0;
  double tolerance = 1e-12;
  int max_iterations = 100000;

  void validate() const;
};

/// The normal-equation pair A = W^T V^T V W, b = W^T V^T w.
struct NormalEquations {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
};
NormalEquations partial_normal_equations(const PartialObservation& obs, const SharedBasis& basis);

/// Minimizes ||A x - b||_2 + lambda ||x||_1 by cyclic coordinate descent.
/// Throws ConvergenceError when the sweep limit is hit.
Eigen::VectorXd solve_lasso(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const SolverConfig& cfg);

/// Coefficients whose back-projection best matches the known voxels.
Eigen::VectorXd solve_partial_projection(const PartialObservation& obs, const SharedBasis& basis,
                                         const SolverConfig& cfg = {});

Eigen::MatrixXd grids_to_matrix(const std::vector<VoxelGrid>& grids);

}  // namespace hbeo
