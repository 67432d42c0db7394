#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "hbeo/beo.hpp"
#include "hbeo/error.hpp"

using namespace hbeo;
using hbeo::test::random_orthonormal;

namespace {

std::vector<Eigen::VectorXd> sample_points(std::mt19937_64& rng, const Eigen::VectorXd& mean, double sd, int n) {
  std::normal_distribution<double> n01;
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd p(mean.size());
    for (Eigen::Index j = 0; j < p.size(); ++j) p(j) = mean(j) + sd * n01(rng);
    out.push_back(p);
  }
  return out;
}

double gaussian_pdf(const ClassGMM::Component& c, const Eigen::VectorXd& x) {
  double logp = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double d = x(j) - c.mean(j);
    logp += -0.5 * std::log(2 * std::numbers::pi * c.variance(j)) - 0.5 * d * d / c.variance(j);
  }
  return std::exp(logp);
}

// Every voxel known with the values of W c: partial projection recovers c exactly.
ObservationProducer fixed_observation(const SharedBasis& basis, const Eigen::VectorXd& c) {
  const Eigen::VectorXd full = basis.matrix() * c;
  return [full, r = basis.resolution()](const Rotation&) {
    PartialObservation obs;
    obs.resolution = r;
    for (Eigen::Index i = 0; i < full.size(); ++i) {
      obs.known_indices.push_back(static_cast<std::uint32_t>(i));
      obs.known_values.push_back(static_cast<float>(full(i)));
    }
    return obs;
  };
}

}  // namespace

TEST_CASE("single-component GMM is the ML Gaussian") {
  std::mt19937_64 rng(1);
  const auto pts = sample_points(rng, Eigen::Vector3d(1, -2, 0.5), 0.7, 200);
  GmmFitOptions opts;
  opts.n_components = 1;
  const auto g = fit_class_gmm(pts, opts);
  REQUIRE(g.components.size() == 1);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero(), var = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= double(pts.size());
  for (const auto& p : pts) var += (p - mean).cwiseAbs2();
  var /= double(pts.size());
  CHECK((g.components[0].mean - mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((g.components[0].variance - var).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(g.components[0].weight == doctest::Approx(1.0).epsilon(1e-12));

  const double peak = log_density(g, mean);
  double closed = 0.0;
  for (int j = 0; j < 3; ++j) closed += -0.5 * std::log(2 * std::numbers::pi * var(j));
  CHECK(peak == doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("GMM weights sum to one and variances respect the floor") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    auto pts = sample_points(rng, Eigen::VectorXd::Zero(4), 1.0, 30);
    const auto far = sample_points(rng, Eigen::VectorXd::Constant(4, 6.0), 0.2, 20);
    pts.insert(pts.end(), far.begin(), far.end());
    GmmFitOptions opts;
    opts.n_components = 1 + t % 3;
    opts.seed = t;
    const auto g = fit_class_gmm(pts, opts);
    double sum = 0.0;
    for (const auto& c : g.components) {
      sum += c.weight;
      CHECK(c.weight > 0);
      CHECK(c.variance.minCoeff() >= g.covariance_floor);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(g.covariance_floor > 0);
    CHECK_NOTHROW(g.validate());
  }
}

TEST_CASE("GMM fit is deterministic for a fixed seed") {
  std::mt19937_64 rng(3);
  const auto pts = sample_points(rng, Eigen::VectorXd::Zero(5), 1.0, 60);
  GmmFitOptions opts;
  opts.n_components = 3;
  opts.seed = 17;
  const auto a = fit_class_gmm(pts, opts), b = fit_class_gmm(pts, opts);
  REQUIRE(a.components.size() == b.components.size());
  for (std::size_t i = 0; i < a.components.size(); ++i) {
    CHECK(a.components[i].weight == b.components[i].weight);
    CHECK(a.components[i].mean == b.components[i].mean);
    CHECK(a.components[i].variance == b.components[i].variance);
  }
}

TEST_CASE("identical points collapse to one floored component") {
  const std::vector<Eigen::VectorXd> pts(10, Eigen::Vector2d(0.3, -1.0));
  GmmFitOptions opts;
  opts.n_components = 2;
  opts.covariance_floor = 1e-4;
  const auto g = fit_class_gmm(pts, opts);
  REQUIRE(g.components.size() == 1);
  CHECK(g.components[0].variance == Eigen::VectorXd::Constant(2, 1e-4));
  CHECK(std::isfinite(log_density(g, pts[0])));
}

TEST_CASE("GMM fit rejects too few points") {
  GmmFitOptions opts;
  opts.n_components = 3;
  CHECK_THROWS_AS(fit_class_gmm({Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1)}, opts), Error);
}

TEST_CASE("log_density: mixture collapse and direct-sum oracle") {
  ClassGMM single;
  single.covariance_floor = 1e-6;
  single.components.push_back({1.0, Eigen::Vector4d(0.1, 0.2, -0.3, 1.0), Eigen::Vector4d(0.5, 1.0, 2.0, 0.25)});
  ClassGMM twice = single;
  twice.components = {single.components[0], single.components[0]};
  twice.components[0].weight = twice.components[1].weight = 0.5;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Vector4d x(n01(rng), n01(rng), n01(rng), n01(rng));
    CHECK(log_density(twice, x) == doctest::Approx(log_density(single, x)).epsilon(1e-12));
  }

  ClassGMM mix;
  mix.covariance_floor = 1e-6;
  std::uniform_real_distribution<double> u(0.2, 2.0);
  double wsum = 0.0;
  for (int c = 0; c < 3; ++c) {
    ClassGMM::Component comp;
    comp.weight = u(rng);
    wsum += comp.weight;
    comp.mean = Eigen::Vector4d(n01(rng), n01(rng), n01(rng), n01(rng));
    comp.variance = Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng));
    mix.components.push_back(comp);
  }
  for (auto& c : mix.components) c.weight /= wsum;
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector4d x(n01(rng), n01(rng), n01(rng), n01(rng));
    double direct = 0.0;
    for (const auto& c : mix.components) direct += c.weight * gaussian_pdf(c, x);
    CHECK(std::abs(log_density(mix, x) - std::log(direct)) < 1e-10);
  }
  CHECK_THROWS_AS(log_density(mix, Eigen::Vector2d(0, 0)), Error);
}

TEST_CASE("log_density stays finite far from every component") {
  ClassGMM g;
  g.covariance_floor = 1e-8;
  g.components.push_back({1.0, Eigen::Vector2d(0, 0), Eigen::Vector2d(1e-8, 1e-8)});
  const double v = log_density(g, Eigen::Vector2d(100, 100));
  CHECK(std::isfinite(v));
  CHECK(v < -1e10);
}

TEST_CASE("priors: validation and normalization") {
  const auto p = PriorConfig::uniform(4);
  CHECK(p.normalized());
  CHECK_NOTHROW(p.validate(4, 10));
  PriorConfig scaled;
  scaled.class_priors = {2.0, 6.0};
  CHECK_FALSE(scaled.normalized());
  CHECK_NOTHROW(scaled.validate(2, 1));
  PriorConfig bad;
  bad.class_priors = {1.0, -0.5};
  CHECK_THROWS_AS(bad.validate(2, 1), Error);
  bad.class_priors = {0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(2, 1), Error);
  CHECK_THROWS_AS(p.validate(3, 1), Error);
}

TEST_CASE("rotation grids cover the requested counts") {
  CHECK(icosphere_directions(0).size() == 12);
  CHECK(icosphere_directions(1).size() == 42);
  for (const auto& d : icosphere_directions(1)) CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-12));
  const auto grid = PoseSearchConfig::three_dof(0, 96);
  CHECK(grid.candidates.size() == 1152);
  for (const auto& r : grid.candidates) CHECK(r.angle() <= std::numbers::pi + 1e-12);
  CHECK(PoseSearchConfig::one_dof(Eigen::Vector3d::UnitY(), 72).candidates.size() == 72);
  // Every random rotation has a candidate within the grid's covering radius.
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto q = hbeo::test::random_rotation(rng);
    double best = 10.0;
    for (const auto& r : grid.candidates) best = std::min(best, geodesic_angle(q, r));
    worst = std::max(worst, best);
  }
  CHECK(worst < 0.75);
}

TEST_CASE("pose search: single class and rotation has posterior one") {
  std::mt19937_64 rng(6);
  const SharedBasis basis(random_orthonormal(rng, 27, 3), 3, {0});
  ClassGMM g;
  g.covariance_floor = 1e-6;
  g.components.push_back({1.0, Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones()});
  PoseSearchConfig search;
  search.candidates = {Rotation(Eigen::Vector3d(0.1, 0.2, 0.3))};
  const auto res = classify_pose_search(fixed_observation(basis, Eigen::Vector3d(0.5, 0.1, -0.2)), basis, {g},
                                        PriorConfig::uniform(1), search);
  CHECK(res.class_index == 0);
  CHECK(res.rotation_index == 0);
  CHECK(res.posterior(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pose search: posterior equals exhaustive grid evaluation") {
  std::mt19937_64 rng(7);
  const SharedBasis basis(random_orthonormal(rng, 64, 3), 4, {0, 1});
  ClassGMM g0, g1;
  g0.covariance_floor = g1.covariance_floor = 1e-6;
  g0.class_id = 0;
  g1.class_id = 1;
  g0.components.push_back({1.0, Eigen::Vector3d(2, 0, 0), Eigen::Vector3d::Constant(0.1)});
  g1.components.push_back({1.0, Eigen::Vector3d(-2, 0, 0), Eigen::Vector3d::Constant(0.1)});
  const std::vector<ClassGMM> gmms{g0, g1};
  const auto candidates = PoseSearchConfig::one_dof(Eigen::Vector3d::UnitZ(), 8).candidates;

  // Candidate i sees coefficients that move the object off class 0 as the angle grows.
  std::vector<Eigen::VectorXd> coeffs;
  for (std::size_t i = 0; i < candidates.size(); ++i) coeffs.push_back(Eigen::Vector3d(2.0 - 0.3 * i, 0.1 * i, 0.0));
  const ObservationProducer producer = [&](const Rotation& r) {
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i] == r) return fixed_observation(basis, coeffs[i])(r);
    throw Error("unknown candidate");
  };
  PriorConfig priors;
  priors.class_priors = {0.3, 0.7};
  priors.rotation_priors.assign(candidates.size(), 1.0 / candidates.size());
  PoseSearchConfig search;
  search.candidates = candidates;
  const auto res = classify_pose_search(producer, basis, gmms, priors, search);
  CHECK(res.class_index == 0);
  CHECK(res.rotation_index == 0);

  Eigen::MatrixXd joint(candidates.size(), 2);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    for (int c = 0; c < 2; ++c) {
      double density = 0.0;
      // o' as the search sees it: the observation stores float values.
      const auto seen = solve_partial_projection(producer(candidates[i]), basis);
      for (const auto& comp : gmms[c].components) density += comp.weight * gaussian_pdf(comp, seen);
      joint(i, c) = priors.rotation_priors[i] * density * priors.class_priors[c];
    }
  joint /= joint.sum();
  CHECK((res.posterior - joint).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(res.posterior.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.posterior.minCoeff() >= 0.0);
}

TEST_CASE("pose search: prior scaling keeps the argmax; uniform priors give ML") {
  std::mt19937_64 rng(8);
  const SharedBasis basis(random_orthonormal(rng, 27, 2), 3, {0, 1, 2});
  std::vector<ClassGMM> gmms(3);
  for (int c = 0; c < 3; ++c) {
    gmms[c].class_id = c;
    gmms[c].covariance_floor = 1e-6;
    gmms[c].components.push_back({1.0, Eigen::Vector2d(c - 1.0, 0.5 * c), Eigen::Vector2d(0.3, 0.3)});
  }
  PoseSearchConfig search = PoseSearchConfig::one_dof(Eigen::Vector3d::UnitX(), 6);
  const auto producer = [&](const Rotation& r) {
    return fixed_observation(basis, Eigen::Vector2d(0.2 + r.angle() * 0.05, 0.4))(r);
  };
  PriorConfig base;
  base.class_priors = {0.2, 0.5, 0.3};
  PriorConfig scaled = base;
  for (auto& p : scaled.class_priors) p *= 40.0;
  const auto a = classify_pose_search(producer, basis, gmms, base, search);
  const auto b = classify_pose_search(producer, basis, gmms, scaled, search);
  CHECK(a.class_index == b.class_index);
  CHECK(a.rotation_index == b.rotation_index);
  CHECK((a.posterior - b.posterior).cwiseAbs().maxCoeff() < 1e-12);

  const auto uniform = classify_pose_search(producer, basis, gmms, PriorConfig::uniform(3), search);
  double best = -std::numeric_limits<double>::infinity();
  std::size_t bc = 0, br = 0;
  for (std::size_t r = 0; r < search.candidates.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const auto obs = producer(search.candidates[r]);
      const double ll = log_density(gmms[c], solve_partial_projection(obs, basis));
      if (ll > best) {
        best = ll;
        bc = c;
        br = r;
      }
    }
  CHECK(uniform.class_index == bc);
  CHECK(uniform.rotation_index == br);
}

TEST_CASE("pose search: serial and parallel agree; failures are skipped") {
  std::mt19937_64 rng(9);
  const SharedBasis basis(random_orthonormal(rng, 27, 2), 3, {0});
  ClassGMM g;
  g.covariance_floor = 1e-6;
  g.components.push_back({1.0, Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1)});
  auto search = PoseSearchConfig::one_dof(Eigen::Vector3d::UnitZ(), 12);
  const auto ok = fixed_observation(basis, Eigen::Vector2d(0.3, 0.1));
  const ObservationProducer flaky = [&](const Rotation& r) {
    if (r.angle() > 1.0) throw Error("candidate outside view");
    return ok(r);
  };
  const auto par = classify_pose_search(flaky, basis, {g}, PriorConfig::uniform(1), search);
  search.parallel = false;
  const auto ser = classify_pose_search(flaky, basis, {g}, PriorConfig::uniform(1), search);
  CHECK(par.posterior == ser.posterior);
  CHECK(par.failed_candidates == ser.failed_candidates);
  CHECK(par.failed_candidates > 0);
  CHECK(par.posterior.sum() == doctest::Approx(1.0).epsilon(1e-9));

  const ObservationProducer broken = [](const Rotation&) -> PartialObservation { throw Error("no view"); };
  CHECK_THROWS_AS(classify_pose_search(broken, basis, {g}, PriorConfig::uniform(1), search), Error);
}
