#include "hbeo/beo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "hbeo/error.hpp"

namespace hbeo {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double component_log_density(const ClassGMM::Component& c, const Eigen::VectorXd& x) {
  const Eigen::ArrayXd diff = (x - c.mean).array();
  return -0.5 * ((kLog2Pi + c.variance.array().log()) + diff.square() / c.variance.array()).sum();
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void ClassGMM::validate() const {
  if (components.empty()) throw Error("mixture has no components");
  if (!(covariance_floor > 0)) throw Error("mixture covariance floor must be positive");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight > 0)) throw Error("mixture weight must be positive");
    if (c.mean.size() != components.front().mean.size() || c.variance.size() != c.mean.size())
      throw Error("mixture component dimensions differ");
    if ((c.variance.array() < covariance_floor).any()) throw Error("mixture variance below floor");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("mixture weights do not sum to 1");
}

ClassGMM fit_class_gmm(const std::vector<Eigen::VectorXd>& pts, const GmmFitOptions& opts, int class_id) {
  if (opts.n_components < 1) throw Error("mixture needs at least one component");
  if (pts.size() < static_cast<std::size_t>(opts.n_components))
    throw Error("mixture fit needs at least as many points as components");
  const auto k = pts.front().size();
  for (const auto& p : pts)
    if (p.size() != k || !p.allFinite()) throw Error("mixture input has inconsistent or non-finite points");
  const auto n = pts.size();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  for (const auto& p : pts) mean += p;
  mean /= double(n);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(k);
  for (const auto& p : pts) var.array() += (p - mean).array().square();
  var /= double(n);

  ClassGMM gmm;
  gmm.class_id = class_id;
  double floor = opts.covariance_floor;
  if (!(floor > 0)) floor = 1e-6 * var.mean();
  if (!(floor > 0)) floor = 1e-12;
  gmm.covariance_floor = floor;

  const bool degenerate = var.maxCoeff() == 0.0;
  if (degenerate || opts.n_components == 1) {
    gmm.components.push_back({1.0, mean, var.cwiseMax(floor)});
    return gmm;
  }

  // k-means++ seeding.
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> centers{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < static_cast<std::size_t>(opts.n_components)) {
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], (pts[i] - pts[centers.back()]).squaredNorm());
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total == 0) break;
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = 0;
    for (; pick + 1 < n; ++pick) {
      if (u < d2[pick]) break;
      u -= d2[pick];
    }
    centers.push_back(pick);
  }

  std::size_t m = centers.size();
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      const double dd = (pts[i] - pts[centers[c]]).squaredNorm();
      if (dd < bd) bd = dd, best = c;
    }
    resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best)) = 1.0;
  }

  auto m_step = [&]() {
    gmm.components.clear();
    for (std::size_t c = 0; c < m; ++c) {
      const double nk = resp.col(static_cast<Eigen::Index>(c)).sum();
      if (nk < 1e-10) continue;  // starved components are dropped
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(k);
      for (std::size_t i = 0; i < n; ++i) mu += resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) * pts[i];
      mu /= nk;
      Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
      for (std::size_t i = 0; i < n; ++i)
        v.array() += resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) * (pts[i] - mu).array().square();
      v /= nk;
      gmm.components.push_back({nk / double(n), mu, v.cwiseMax(floor)});
    }
  };

  m_step();
  double prev = kNegInf;
  std::vector<double> lp;
  for (int it = 0; it < opts.max_iters; ++it) {
    const auto mc = gmm.components.size();
    resp.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(mc));
    double loglik = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lp.resize(mc);
      for (std::size_t c = 0; c < mc; ++c)
        lp[c] = std::log(gmm.components[c].weight) + component_log_density(gmm.components[c], pts[i]);
      const double lse = log_sum_exp(lp);
      loglik += lse;
      for (std::size_t c = 0; c < mc; ++c)
        resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = std::exp(lp[c] - lse);
    }
    m = mc;
    m_step();
    if (std::abs(loglik - prev) <= opts.tolerance * std::max(1.0, std::abs(loglik))) break;
    prev = loglik;
  }

  // Renormalize against accumulated rounding.
  double total = 0.0;
  for (const auto& c : gmm.components) total += c.weight;
  for (auto& c : gmm.components) c.weight /= total;
  return gmm;
}

double log_density(const ClassGMM& gmm, const Eigen::VectorXd& coeffs) {
  if (gmm.components.empty()) throw Error("mixture has no components");
  if (coeffs.size() != gmm.components.front().mean.size()) throw Error("coefficient length does not match mixture");
  std::vector<double> lp;
  lp.reserve(gmm.components.size());
  for (const auto& c : gmm.components) lp.push_back(std::log(c.weight) + component_log_density(c, coeffs));
  return log_sum_exp(lp);
}

PriorConfig PriorConfig::uniform(std::size_t classes) {
  PriorConfig p;
  p.class_priors.assign(classes, 1.0 / double(classes));
  return p;
}

bool PriorConfig::normalized() const {
  auto sums_to_one = [](const std::vector<double>& v) {
    return std::abs(std::accumulate(v.begin(), v.end(), 0.0) - 1.0) <= 1e-9;
  };
  return sums_to_one(class_priors) && (rotation_priors.empty() || sums_to_one(rotation_priors));
}

void PriorConfig::validate(std::size_t classes, std::size_t rotations) const {
  auto check = [](const std::vector<double>& v, const char* what) {
    double s = 0.0;
    for (double x : v) {
      if (!(x >= 0) || !std::isfinite(x)) throw Error(std::string(what) + " prior has an invalid entry");
      s += x;
    }
    if (!(s > 0)) throw Error(std::string(what) + " prior has no mass");
  };
  if (class_priors.size() != classes) throw Error("class prior count does not match class count");
  check(class_priors, "class");
  if (!rotation_priors.empty()) {
    if (rotation_priors.size() != rotations) throw Error("rotation prior count does not match candidate count");
    check(rotation_priors, "rotation");
  }
}

std::vector<Eigen::Vector3d> icosphere_directions(int level) {
  if (level < 0) throw Error("icosphere level must be non-negative");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                    {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = mid.find(key); it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size() - 1);
    };
    std::vector<std::array<int, 3>> nf;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  return v;
}

PoseSearchConfig PoseSearchConfig::three_dof(int icosphere_level, int angle_bins) {
  if (angle_bins < 1) throw Error("angle_bins must be at least 1");
  PoseSearchConfig cfg;
  const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
  for (const auto& dir : icosphere_directions(icosphere_level)) {
    // Minimal rotation taking +z onto dir, then a spin about dir.
    Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(z, dir);
    if (dir.dot(z) < -1 + 1e-12) align = Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitX()));
    for (int b = 0; b < angle_bins; ++b) {
      const Eigen::Quaterniond spin(Eigen::AngleAxisd(2.0 * std::numbers::pi * b / angle_bins, dir));
      cfg.candidates.push_back(Rotation::from_quaternion(spin * align).canonical());
    }
  }
  return cfg;
}

PoseSearchConfig PoseSearchConfig::one_dof(const Eigen::Vector3d& axis, int bins) {
  if (bins < 1) throw Error("bins must be at least 1");
  PoseSearchConfig cfg;
  for (int b = 0; b < bins; ++b) cfg.candidates.push_back(Rotation(axis, 2.0 * std::numbers::pi * b / bins).canonical());
  return cfg;
}

PoseSearchResult classify_pose_search(const ObservationProducer& producer, const SharedBasis& basis,
                                      const std::vector<ClassGMM>& gmms, const PriorConfig& priors,
                                      const PoseSearchConfig& search, const SolverConfig& solver) {
  const std::size_t nc = gmms.size(), nr = search.candidates.size();
  if (nc == 0) throw Error("pose search needs at least one class");
  if (nr == 0) throw Error("pose search needs at least one candidate rotation");
  priors.validate(nc, nr);
  for (const auto& g : gmms)
    if (g.dimension() != basis.rank()) throw Error("mixture dimension does not match basis rank");

  PoseSearchResult res;
  res.log_joint = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc), kNegInf);
  std::vector<Eigen::VectorXd> coeffs(nr);
  std::vector<char> ok(nr, 0);

  const int count = static_cast<int>(nr);
#pragma omp parallel for schedule(dynamic) if (search.parallel)
  for (int i = 0; i < count; ++i) {
    try {
      const PartialObservation obs = producer(search.candidates[static_cast<std::size_t>(i)]);
      coeffs[static_cast<std::size_t>(i)] = solve_partial_projection(obs, basis, solver);
      const double lpr = priors.rotation_priors.empty() ? -std::log(double(nr))
                                                        : std::log(priors.rotation_priors[static_cast<std::size_t>(i)]);
      for (std::size_t c = 0; c < nc; ++c)
        res.log_joint(i, static_cast<Eigen::Index>(c)) =
            lpr + log_density(gmms[c], coeffs[static_cast<std::size_t>(i)]) + std::log(priors.class_priors[c]);
      ok[static_cast<std::size_t>(i)] = 1;
    } catch (const std::exception&) {
      ok[static_cast<std::size_t>(i)] = 0;
    }
  }

  res.failed_candidates = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 0));
  if (res.failed_candidates == nr) throw Error("pose search: every candidate rotation failed");

  // Fixed-order reduction: class-major, rotation-minor, strict improvement.
  double best = kNegInf;
  bool found = false;
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t r = 0; r < nr; ++r) {
      const double v = res.log_joint(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (!ok[r] || !std::isfinite(v)) continue;
      if (!found || v > best) {
        best = v;
        res.class_index = c;
        res.rotation_index = r;
        found = true;
      }
    }

  if (!found) throw Error("pose search: no candidate has positive posterior mass");

  double m = kNegInf;
  for (Eigen::Index i = 0; i < res.log_joint.size(); ++i) m = std::max(m, res.log_joint.data()[i]);
  double z = 0.0;
  for (Eigen::Index i = 0; i < res.log_joint.size(); ++i)
    if (std::isfinite(res.log_joint.data()[i])) z += std::exp(res.log_joint.data()[i] - m);
  res.posterior = res.log_joint;
  for (Eigen::Index i = 0; i < res.posterior.size(); ++i) {
    const double v = res.log_joint.data()[i];
    res.posterior.data()[i] = std::isfinite(v) ? std::exp(v - m) / z : 0.0;
  }
  res.rotation = search.candidates[res.rotation_index];
  res.coefficients = coeffs[res.rotation_index];
  return res;
}

}  // namespace hbeo
