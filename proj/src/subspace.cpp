#include "hbeo/subspace.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hbeo/error.hpp"

namespace hbeo {

void VBPCAConfig::validate() const {
  if (!(variance_target > 0 && variance_target <= 1)) throw Error("variance_target must lie in (0, 1]");
  if (max_components < 1) throw Error("max_components must be at least 1");
  if (em_max_iters < 1) throw Error("em_max_iters must be at least 1");
  if (!(em_rel_tolerance > 0)) throw Error("em_rel_tolerance must be positive");
  if (!(basis_prior_variance > 0) || !(mean_prior_variance > 0)) throw Error("prior variances must be positive");
}

void SolverConfig::validate() const {
  if (!(lasso_lambda >= 0)) throw Error("lasso_lambda must be non-negative");
  if (!(tolerance > 0)) throw Error("solver tolerance must be positive");
  if (max_iterations < 1) throw Error("solver max_iterations must be at least 1");
}

Eigen::MatrixXd grids_to_matrix(const std::vector<VoxelGrid>& grids) {
  if (grids.empty()) return {};
  const auto d = static_cast<Eigen::Index>(grids.front().size());
  Eigen::MatrixXd x(d, static_cast<Eigen::Index>(grids.size()));
  for (std::size_t j = 0; j < grids.size(); ++j) {
    if (grids[j].resolution() != grids.front().resolution()) throw Error("training grids differ in resolution");
    const auto v = grids[j].values();
    for (Eigen::Index i = 0; i < d; ++i) x(i, static_cast<Eigen::Index>(j)) = v[static_cast<std::size_t>(i)];
  }
  return x;
}

double ppca_objective(const Eigen::MatrixXd& data, const Eigen::MatrixXd& basis, const Eigen::VectorXd& mean,
                      double noise_variance, const VBPCAConfig& cfg) {
  const auto d = static_cast<double>(data.rows());
  const auto n = static_cast<double>(data.cols());
  const auto q = basis.cols();
  const Eigen::MatrixXd y = data.colwise() - mean;
  const Eigen::MatrixXd m = basis.transpose() * basis + noise_variance * Eigen::MatrixXd::Identity(q, q);
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  const double logdet_m = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_c = (d - static_cast<double>(q)) * std::log(noise_variance) + logdet_m;
  // y^T C^-1 y = ||y - W M^-1 W^T y||^2 / s2 + ||M^-1 W^T y||^2: both terms
  // non-negative, so no cancellation when s2 is tiny.
  const Eigen::MatrixXd c = llt.solve(basis.transpose() * y);
  const double quad = (y - basis * c).squaredNorm() / noise_variance + c.squaredNorm();
  return 0.5 * (n * logdet_c + quad) + 0.5 * basis.squaredNorm() / cfg.basis_prior_variance +
         0.5 * mean.squaredNorm() / cfg.mean_prior_variance;
}

namespace {

struct EmState {
  Eigen::MatrixXd w;
  Eigen::VectorXd mu;
  double sigma2 = 0.0;
  Eigen::MatrixXd ec;  // q x n
  std::vector<double> history;
};

// One EM run at fixed component count; each M-step is a sequence of exact
// conditional maximizations (W, then mu, then sigma^2), so the objective can
// only decrease.
void run_em(const Eigen::MatrixXd& x, const VBPCAConfig& cfg, double sigma2_floor, EmState& s) {
  const auto d = x.rows(), n = x.cols(), q = s.w.cols();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(q, q);
  s.history.clear();
  double prev = ppca_objective(x, s.w, s.mu, s.sigma2, cfg);
  s.history.push_back(prev);
  int rising = 0;
  for (int it = 0; it < cfg.em_max_iters; ++it) {
    // E-step.
    Eigen::MatrixXd y = x.colwise() - s.mu;
    const Eigen::MatrixXd m = s.w.transpose() * s.w + s.sigma2 * eye;
    const Eigen::LLT<Eigen::MatrixXd> mllt(m);
    const Eigen::MatrixXd minv = mllt.solve(eye);
    s.ec = minv * (s.w.transpose() * y);
    const Eigen::MatrixXd ecc = double(n) * s.sigma2 * minv + s.ec * s.ec.transpose();

    // M-step.
    const Eigen::MatrixXd lhs = ecc + (s.sigma2 / cfg.basis_prior_variance) * eye;
    s.w = (y * s.ec.transpose()) * lhs.llt().solve(eye);
    s.mu = (x - s.w * s.ec).rowwise().sum() / (double(n) + s.sigma2 / cfg.mean_prior_variance);
    y = x.colwise() - s.mu;
    const double resid = y.squaredNorm() - 2.0 * (s.ec.array() * (s.w.transpose() * y).array()).sum() +
                         (ecc.array() * (s.w.transpose() * s.w).array()).sum();
    s.sigma2 = std::max(resid / (double(n) * double(d)), sigma2_floor);

    const double obj = ppca_objective(x, s.w, s.mu, s.sigma2, cfg);
    if (!std::isfinite(obj)) throw Error("subspace EM produced a non-finite objective");
    s.history.push_back(obj);
    rising = obj > prev + 1e-12 * std::max(std::abs(prev), 1.0) ? rising + 1 : 0;
    if (rising >= 5) throw Error("subspace EM diverged: objective rose for 5 consecutive iterations");
    const double rel = std::abs(prev - obj) / std::max(std::abs(obj), 1.0);
    prev = obj;
    if (rel < cfg.em_rel_tolerance) break;
  }
  // Final posterior means under the converged parameters.
  const Eigen::MatrixXd m = s.w.transpose() * s.w + s.sigma2 * eye;
  s.ec = m.llt().solve(s.w.transpose() * (x.colwise() - s.mu));
}

}  // namespace

ClassSubspace fit_class_subspace(const Eigen::MatrixXd& x, const VBPCAConfig& cfg, int class_id) {
  cfg.validate();
  const auto d = x.rows(), n = x.cols();
  if (n < 2) throw Error("subspace fit needs at least 2 samples");
  if (!x.allFinite()) throw Error("subspace fit input contains non-finite values");

  const Eigen::VectorXd sample_mean = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - sample_mean;
  const double total_var = centered.squaredNorm() / double(n);
  const double sigma2_floor = std::max(1e-10 * total_var / double(d), 1e-300);

  // Principal directions through the n x n Gram matrix (n << d).
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered);
  const Eigen::Index q = std::min<Eigen::Index>({cfg.max_components, n - 1, d});
  Eigen::VectorXd lambda(q);
  Eigen::MatrixXd dirs(d, q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const Eigen::Index src = n - 1 - j;  // ascending eigenvalues
    const double ev = std::max(eig.eigenvalues()(src), 0.0);
    lambda(j) = ev / double(n);
    dirs.col(j) = ev > 0 ? Eigen::VectorXd(centered * eig.eigenvectors().col(src) / std::sqrt(ev))
                         : Eigen::VectorXd::Zero(d);
  }

  EmState s;
  s.mu = sample_mean;
  s.sigma2 = d > q ? std::max((total_var - lambda.sum()) / double(d - q), sigma2_floor) : sigma2_floor;
  s.w = dirs * (lambda.array() - s.sigma2).max(0.0).sqrt().matrix().asDiagonal();
  if (s.w.squaredNorm() == 0) throw Error("subspace fit input has no variance");
  run_em(x, cfg, sigma2_floor, s);

  // Rank retained directions by the variance they capture and keep the fewest
  // reaching the target.
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(s.w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues().maxCoeff();
  std::vector<Eigen::Index> usable;
  for (Eigen::Index j = 0; j < svd.singularValues().size(); ++j)
    if (svd.singularValues()(j) > 1e-12 * smax) usable.push_back(j);
  const Eigen::MatrixXd proj = svd.matrixU().transpose() * centered;
  std::vector<double> captured(static_cast<std::size_t>(svd.singularValues().size()));
  for (Eigen::Index j = 0; j < proj.rows(); ++j) captured[std::size_t(j)] = proj.row(j).squaredNorm() / double(n);
  std::stable_sort(usable.begin(), usable.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return captured[std::size_t(a)] > captured[std::size_t(b)]; });
  std::size_t k = 0;
  double cum = 0.0;
  while (k < usable.size()) {
    cum += captured[std::size_t(usable[k])];
    ++k;
    if (cum >= cfg.variance_target * total_var * (1.0 - 1e-12)) break;
  }

  if (static_cast<Eigen::Index>(k) < q) {
    Eigen::MatrixXd wk(d, static_cast<Eigen::Index>(k));
    const Eigen::MatrixXd us = svd.matrixU() * svd.singularValues().asDiagonal();
    for (std::size_t j = 0; j < k; ++j) wk.col(static_cast<Eigen::Index>(j)) = us.col(usable[j]);
    s.w = wk;
    run_em(x, cfg, sigma2_floor, s);
  }

  // Fold the average coefficient into the mean so coefficients are centered.
  const Eigen::VectorXd cbar = s.ec.rowwise().mean();
  ClassSubspace out;
  out.class_id = class_id;
  out.mean = s.mu + s.w * cbar;
  out.coefficients = s.ec.colwise() - cbar;
  out.basis = std::move(s.w);
  out.noise_variance = s.sigma2;
  out.objective_history = std::move(s.history);
  {
    const Eigen::JacobiSVD<Eigen::MatrixXd> fin(out.basis, Eigen::ComputeThinU);
    out.captured_variance = (fin.matrixU().transpose() * centered).squaredNorm() / double(n) / total_var;
  }
  if (!out.basis.allFinite() || !out.mean.allFinite()) throw Error("subspace fit produced non-finite parameters");
  return out;
}

ClassSubspace fit_class_subspace(const std::vector<VoxelGrid>& grids, const VBPCAConfig& cfg, int class_id) {
  if (grids.size() < 2) throw Error("subspace fit needs at least 2 samples");
  return fit_class_subspace(grids_to_matrix(grids), cfg, class_id);
}

SharedBasis::SharedBasis(Eigen::MatrixXd w, int resolution, std::vector<int> class_ids)
    : w_(std::move(w)), resolution_(resolution), class_ids_(std::move(class_ids)) {
  if (w_.cols() < 1) throw Error("shared basis must have at least one column");
  if (resolution_ > 0 && w_.rows() != static_cast<Eigen::Index>(resolution_) * resolution_ * resolution_)
    throw Error("shared basis row count does not match resolution^3");
  if (!w_.allFinite()) throw Error("shared basis contains non-finite entries");
  if (const double err = orthonormality_error(); !(err < kOrthonormalityTolerance))
    throw Error("shared basis is not orthonormal (max |W^T W - I| = " + std::to_string(err) + ")");
}

double SharedBasis::orthonormality_error() const {
  const Eigen::MatrixXd g = w_.transpose() * w_ - Eigen::MatrixXd::Identity(w_.cols(), w_.cols());
  return g.cwiseAbs().maxCoeff();
}

SharedBasis build_shared_basis(const std::vector<ClassSubspace>& subspaces, int resolution) {
  if (subspaces.empty()) throw Error("shared basis needs at least one class subspace");
  const auto d = subspaces.front().basis.rows();
  Eigen::Index cols = 0;
  for (const auto& s : subspaces) {
    if (s.basis.rows() != d || s.mean.size() != d) throw Error("class subspaces differ in dimension");
    cols += s.basis.cols() + 1;
  }
  Eigen::MatrixXd stacked(d, cols);
  Eigen::Index c = 0;
  for (const auto& s : subspaces) {
    stacked.middleCols(c, s.basis.cols()) = s.basis;
    c += s.basis.cols();
  }
  for (const auto& s : subspaces) stacked.col(c++) = s.mean;

  const Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(0) > 0)) throw Error("class subspaces span only the zero vector");
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > sv(0) * kRankCutoff) ++rank;

  std::vector<int> ids;
  for (const auto& s : subspaces) ids.push_back(s.class_id);
  return SharedBasis(svd.matrixU().leftCols(rank), resolution, std::move(ids));
}

Eigen::VectorXd project(const Eigen::VectorXd& object, const SharedBasis& basis) {
  if (object.size() != basis.dimension()) throw Error("object length does not match basis dimension");
  return basis.matrix().transpose() * object;
}

Eigen::VectorXd project(const VoxelGrid& grid, const SharedBasis& basis) {
  if (static_cast<Eigen::Index>(grid.size()) != basis.dimension())
    throw Error("grid size does not match basis dimension");
  const auto v = grid.values();
  Eigen::VectorXd o(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) o(static_cast<Eigen::Index>(i)) = v[i];
  return project(o, basis);
}

VoxelGrid back_project(const Eigen::VectorXd& coeffs, const SharedBasis& basis, bool binarize) {
  if (coeffs.size() != basis.rank()) throw Error("coefficient length does not match basis rank");
  const Eigen::VectorXd o = basis.matrix() * coeffs;
  std::vector<float> values(static_cast<std::size_t>(o.size()));
  for (Eigen::Index i = 0; i < o.size(); ++i) {
    const auto v = static_cast<float>(o(i));
    values[static_cast<std::size_t>(i)] = binarize ? (o(i) > kBinarizeThreshold ? 1.0f : 0.0f) : v;
  }
  return VoxelGrid(basis.resolution(), std::move(values), binarize);
}

PartialError partial_error_and_gradient(const Eigen::VectorXd& coeffs, const PartialObservation& obs,
                                        const SharedBasis& basis) {
  if (coeffs.size() != basis.rank()) throw Error("coefficient length does not match basis rank");
  if (obs.known_count() == 0) throw Error("partial observation has no known voxels");
  if (obs.grid_size() != static_cast<std::size_t>(basis.dimension()))
    throw Error("observation resolution does not match basis");
  const auto& w = basis.matrix();
  PartialError out;
  out.gradient = Eigen::VectorXd::Zero(coeffs.size());
  for (std::size_t j = 0; j < obs.known_count(); ++j) {
    const auto row = static_cast<Eigen::Index>(obs.known_indices[j]);
    const double resid = w.row(row).dot(coeffs) - obs.known_values[j];
    out.error += resid * resid;
    out.gradient += (2.0 * resid) * w.row(row).transpose();
  }
  return out;
}

NormalEquations partial_normal_equations(const PartialObservation& obs, const SharedBasis& basis) {
  if (obs.known_count() == 0) throw Error("partial observation has no known voxels");
  if (obs.grid_size() != static_cast<std::size_t>(basis.dimension()))
    throw Error("observation resolution does not match basis");
  const auto& w = basis.matrix();
  const auto k = w.cols();
  const auto m = static_cast<Eigen::Index>(obs.known_count());
  Eigen::MatrixXd vw(m, k);
  Eigen::VectorXd known(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto row = static_cast<Eigen::Index>(obs.known_indices[static_cast<std::size_t>(j)]);
    if (row >= w.rows()) throw Error("observation index out of range");
    vw.row(j) = w.row(row);
    known(j) = obs.known_values[static_cast<std::size_t>(j)];
  }
  NormalEquations ne;
  ne.a = Eigen::MatrixXd::Zero(k, k);
  ne.a.selfadjointView<Eigen::Lower>().rankUpdate(vw.transpose());
  ne.a = ne.a.selfadjointView<Eigen::Lower>();
  ne.b = vw.transpose() * known;
  return ne;
}

Eigen::VectorXd solve_lasso(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const SolverConfig& cfg) {
  cfg.validate();
  if (a.rows() != b.size()) throw Error("lasso system shape mismatch");
  const auto k = a.cols();
  const double lambda = cfg.lasso_lambda;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd resid = -b;  // A x - b
  const Eigen::VectorXd col_sq = a.colwise().squaredNorm();
  for (int sweep = 0; sweep < cfg.max_iterations; ++sweep) {
    double max_step = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double alpha = col_sq(j);
      if (alpha == 0) continue;
      // Residual with coordinate j removed: u = r - a_j x_j.
      const Eigen::VectorXd u = resid - a.col(j) * x(j);
      const double beta = a.col(j).dot(u);
      double t;
      if (lambda == 0) {
        t = -beta / alpha;
      } else {
        // argmin_t ||u + a_j t|| + lambda |t|.
        const double gamma = u.squaredNorm();
        if (alpha <= lambda * lambda || std::abs(beta) <= lambda * std::sqrt(gamma)) {
          t = 0.0;
        } else {
          const double delta2 = std::max(gamma - beta * beta / alpha, 0.0);
          const double shift = lambda * std::sqrt(delta2) / std::sqrt(alpha * (alpha - lambda * lambda));
          t = -beta / alpha + (beta > 0 ? shift : -shift);
        }
      }
      const double step = t - x(j);
      if (step != 0) {
        resid = u + a.col(j) * t;
        x(j) = t;
      }
      max_step = std::max(max_step, std::abs(step));
    }
    if (max_step <= cfg.tolerance * std::max(1.0, x.cwiseAbs().maxCoeff())) return x;
  }
  throw ConvergenceError("lasso coordinate descent hit the sweep limit", resid.norm());
}

Eigen::VectorXd solve_partial_projection(const PartialObservation& obs, const SharedBasis& basis,
                                         const SolverConfig& cfg) {
  cfg.validate();
  const auto ne = partial_normal_equations(obs, basis);
  if (cfg.lasso_lambda > 0) return solve_lasso(ne.a, ne.b, cfg);

  Eigen::LLT<Eigen::MatrixXd> llt(ne.a);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    const double jitter = 1e-10 * ne.a.trace() / double(ne.a.rows());
    Eigen::MatrixXd reg = ne.a;
    reg.diagonal().array() += jitter > 0 ? jitter : 1e-12;
    llt.compute(reg);
    if (llt.info() != Eigen::Success) throw ConvergenceError("partial projection system is not factorizable", ne.b.norm());
  }
  Eigen::VectorXd x = llt.solve(ne.b);
  if (!x.allFinite()) throw ConvergenceError("partial projection produced non-finite coefficients", ne.b.norm());
  return x;
}

}  // namespace hbeo
