#include "hbeo/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <sstream>

#include "hbeo/edt.hpp"
#include "hbeo/error.hpp"
#include "hbeo/io.hpp"
#include "hbeo/observation.hpp"
#include "json.hpp"

namespace hbeo {

using nlohmann::json;

namespace {

void require_same_shape(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.resolution() != b.resolution() || a.size() != b.size()) throw Error("completion grids differ in resolution");
}

double field_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Restores the OpenMP thread count on scope exit.
class ThreadLimit {
 public:
  explicit ThreadLimit(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadLimit() { omp_set_num_threads(saved_); }
  ThreadLimit(const ThreadLimit&) = delete;
  ThreadLimit& operator=(const ThreadLimit&) = delete;

 private:
  int saved_;
};

}  // namespace

double completion_score_naive(const VoxelGrid& truth, const VoxelGrid& estimate) {
  require_same_shape(truth, estimate);
  const auto a = truth.values(), b = estimate.values();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = double(a[i]) - double(b[i]);
    s += e * e;
  }
  return 1.0 - std::sqrt(s) / double(a.size());
}

double completion_score_edt(const VoxelGrid& truth, const VoxelGrid& estimate) {
  require_same_shape(truth, estimate);
  return field_distance(edt(truth).distances, edt(estimate).distances);
}

double completion_score_edt_or_worst(const VoxelGrid& truth, const VoxelGrid& estimate) {
  require_same_shape(truth, estimate);
  if (estimate.occupied_count() > 0) return completion_score_edt(truth, estimate);
  const std::vector<double> worst(truth.size(), truth.resolution() * std::sqrt(3.0));
  return field_distance(edt(truth).distances, worst);
}

HbeoModel fit_subspace_model(const Dataset& ds, const VBPCAConfig& cfg) {
  HbeoModel m;
  m.class_names = ds.class_names;
  m.resolution = ds.resolution;
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
    std::vector<VoxelGrid> grids;
    for (std::size_t o : ds.objects_in(Split::kTrain, static_cast<int>(c))) grids.push_back(ds.objects[o].grid);
    try {
      m.subspaces.push_back(fit_class_subspace(grids, cfg, static_cast<int>(c)));
    } catch (const Error& e) {
      throw Error("class '" + ds.class_names[c] + "': " + e.what());
    }
  }
  m.basis = build_shared_basis(m.subspaces, ds.resolution);
  return m;
}

void fit_gmms(HbeoModel& model, const Dataset& ds, const GmmFitOptions& opts) {
  model.gmms.clear();
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
    std::vector<Eigen::VectorXd> pts;
    for (std::size_t o : ds.objects_in(Split::kTrain, static_cast<int>(c)))
      pts.push_back(project(ds.objects[o].grid, model.basis));
    GmmFitOptions o = opts;
    o.seed = opts.seed + c;
    model.gmms.push_back(fit_class_gmm(pts, o, static_cast<int>(c)));
  }
}

std::vector<double> train_network(HbeoModel& model, const Dataset& ds, const NetworkTrainOptions& opts,
                                  const std::function<void(const TrainProgress&)>& on_epoch) {
  NetworkSpec spec = opts.spec;
  spec.num_classes = static_cast<int>(model.class_names.size());
  spec.projection_dim = model.basis.rank();
  if (spec.input_width != ds.renders.front().camera.width || spec.input_height != ds.renders.front().camera.height)
    throw Error("network input size does not match the dataset renders");
  const auto samples = make_train_samples(ds, model.basis, Split::kTrain);
  auto result = train(init_network(spec, opts.init_seed), samples, opts.loss, opts.optimizer, on_epoch);
  model.network = std::move(result.network);
  return result.loss_curve;
}

const char* mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::kHbeo: return "hbeo";
    case EvalMode::kBeoKnownPose: return "beo-known-pose";
    case EvalMode::kBeoSearch: return "beo-search";
  }
  return "?";
}

EvalMode parse_mode(const std::string& s) {
  for (EvalMode m : {EvalMode::kHbeo, EvalMode::kBeoKnownPose, EvalMode::kBeoSearch})
    if (s == mode_name(m)) return m;
  throw Error("unknown evaluation mode '" + s + "' (expected hbeo, beo-known-pose or beo-search)");
}

Summary summarize(std::vector<double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double q) {
    const double pos = q * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
  };
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / double(v.size());
  s.median = quantile(0.5);
  s.q1 = quantile(0.25);
  s.q3 = quantile(0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

ModeReport evaluate_predictor(const Dataset& ds, const std::vector<std::size_t>& renders, const Predictor& predict,
                              const std::string& mode, bool estimates_pose) {
  const std::size_t n = renders.size(), nc = ds.class_names.size();
  struct Outcome {
    int label = -1;
    double pose_error = std::numbers::pi;
    double naive = 0.0, edt = 0.0, seconds = 0.0;
  };
  std::vector<Outcome> out(n);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < count; ++i) {
    const RenderRecord& r = ds.renders[renders[static_cast<std::size_t>(i)]];
    const VoxelGrid& truth = ds.objects[r.object].grid;
    Outcome& o = out[static_cast<std::size_t>(i)];
    Prediction p;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      p = predict(r);
    } catch (const std::exception&) {
      p.label = -1;
    }
    o.seconds = seconds_since(t0);
    if (p.label < 0 || p.label >= static_cast<int>(nc) || p.completion.size() != truth.size()) {
      o.label = -1;
      p.completion = VoxelGrid(truth.resolution());
    } else {
      o.label = p.label;
      o.pose_error = geodesic_angle(r.pose.canonical(), p.pose.canonical());
    }
    o.naive = completion_score_naive(truth, p.completion);
    o.edt = completion_score_edt_or_worst(truth, p.completion);
  }

  ModeReport rep;
  rep.mode = mode;
  rep.samples = n;
  rep.estimates_pose = estimates_pose;
  rep.confusion.assign(nc, std::vector<std::size_t>(nc + 1, 0));
  std::vector<std::vector<double>> naive(nc), edt_scores(nc);
  std::vector<double> all_naive, all_edt;
  double seconds = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto truth = static_cast<std::size_t>(ds.objects[ds.renders[renders[i]].object].label);
    const Outcome& o = out[i];
    if (o.label < 0) ++rep.failures;
    ++rep.confusion[truth][o.label < 0 ? nc : static_cast<std::size_t>(o.label)];
    if (estimates_pose) rep.pose_errors.push_back(o.pose_error);
    naive[truth].push_back(o.naive);
    edt_scores[truth].push_back(o.edt);
    all_naive.push_back(o.naive);
    all_edt.push_back(o.edt);
    seconds += o.seconds;
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    std::size_t total = 0;
    for (std::size_t v : rep.confusion[c]) total += v;
    correct += rep.confusion[c][c];
    rep.class_accuracy.push_back(total ? 100.0 * double(rep.confusion[c][c]) / double(total) : 0.0);
    rep.naive_by_class.push_back(summarize(naive[c]));
    rep.edt_by_class.push_back(summarize(edt_scores[c]));
  }
  rep.total_accuracy = n ? 100.0 * double(correct) / double(n) : 0.0;
  rep.pose = summarize(rep.pose_errors);
  rep.naive_total = summarize(all_naive);
  rep.edt_total = summarize(all_edt);
  rep.mean_seconds = n ? seconds / double(n) : 0.0;
  return rep;
}

Predictor make_predictor(const HbeoModel& model, EvalMode mode, const EvalConfig& cfg) {
  const int r = model.resolution;
  const PriorConfig priors = cfg.priors.class_priors.empty() ? PriorConfig::uniform(model.class_names.size()) : cfg.priors;
  switch (mode) {
    case EvalMode::kHbeo: {
      if (!model.network) throw Error("model has no trained network; run train-net first");
      return [&model](const RenderRecord& rec) {
        const auto inf = infer_joint(*model.network, rec.depth, model.basis);
        return Prediction{static_cast<int>(inf.class_index), inf.pose, inf.completion};
      };
    }
    case EvalMode::kBeoKnownPose: {
      if (model.gmms.empty()) throw Error("model has no class mixtures; run fit-gmm first");
      return [&model, r, priors, solver = cfg.solver](const RenderRecord& rec) {
        const auto obs = carve_partial_observation(rec.depth, rec.pose, rec.camera, r);
        const auto coeffs = solve_partial_projection(obs, model.basis, solver);
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < model.gmms.size(); ++c) {
          if (!(priors.class_priors[c] > 0)) continue;
          const double s = log_density(model.gmms[c], coeffs) + std::log(priors.class_priors[c]);
          if (s > best_score) best_score = s, best = static_cast<int>(c);
        }
        return Prediction{best, rec.pose, back_project(coeffs, model.basis, true)};
      };
    }
    case EvalMode::kBeoSearch: {
      if (model.gmms.empty()) throw Error("model has no class mixtures; run fit-gmm first");
      PoseSearchConfig search = cfg.search.candidates.empty() ? search_grid(1152) : cfg.search;
      search.parallel = false;  // evaluation already runs one query per thread
      return [&model, r, priors, search, solver = cfg.solver](const RenderRecord& rec) {
        const ObservationProducer producer = [&](const Rotation& cand) {
          return carve_partial_observation(rec.depth, cand, rec.camera, r);
        };
        const auto res = classify_pose_search(producer, model.basis, model.gmms, priors, search, solver);
        return Prediction{static_cast<int>(res.class_index), res.rotation,
                          back_project(res.coefficients, model.basis, true)};
      };
    }
  }
  throw Error("unknown evaluation mode");
}

EvalReport evaluate(const Dataset& ds, const HbeoModel& model, const EvalConfig& cfg) {
  if (model.resolution != ds.resolution) throw Error("model resolution does not match the dataset");
  if (model.class_names != ds.class_names) throw Error("model classes do not match the dataset");
  EvalReport rep;
  rep.class_names = ds.class_names;
  const auto test = ds.renders_in(Split::kTest);
  if (test.empty()) throw Error("dataset has no test renders");

  for (EvalMode mode : cfg.modes) {
    std::vector<std::size_t> subset = test;
    if (mode == EvalMode::kBeoSearch && cfg.beo_search_limit > 0 && cfg.beo_search_limit < test.size()) {
      subset.clear();
      for (std::size_t i = 0; i < cfg.beo_search_limit; ++i) subset.push_back(test[i * test.size() / cfg.beo_search_limit]);
    }
    rep.modes.push_back(
        evaluate_predictor(ds, subset, make_predictor(model, mode, cfg), mode_name(mode), mode != EvalMode::kBeoKnownPose));
  }

  std::vector<double> floor_by_object(ds.objects.size(), 0.0);
  std::vector<char> need(ds.objects.size(), 0);
  for (std::size_t i : test) need[ds.renders[i].object] = 1;
  const auto nobj = static_cast<long long>(ds.objects.size());
#pragma omp parallel for schedule(dynamic)
  for (long long o = 0; o < nobj; ++o) {
    const auto& g = ds.objects[static_cast<std::size_t>(o)].grid;
    if (need[static_cast<std::size_t>(o)])
      floor_by_object[static_cast<std::size_t>(o)] =
          completion_score_edt_or_worst(g, back_project(project(g, model.basis), model.basis, true));
  }
  std::vector<std::vector<double>> per_class(ds.class_names.size());
  std::vector<double> all;
  for (std::size_t i : test) {
    const auto o = ds.renders[i].object;
    per_class[std::size_t(ds.objects[o].label)].push_back(floor_by_object[o]);
    all.push_back(floor_by_object[o]);
  }
  for (auto& v : per_class) rep.floor_edt_by_class.push_back(summarize(v));
  rep.floor_edt_total = summarize(all);
  return rep;
}

namespace {

json summary_json(const Summary& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

std::string report_json(const EvalReport& report) {
  json j;
  j["classes"] = report.class_names;
  j["reference"] = {{"note", "full-scale ModelNet10 totals, context only; not reproduced at desk scale"},
                    {"hbeo_total_accuracy", 81.8},
                    {"beo_1dof_total_accuracy", 54.5},
                    {"hbeo_inference_seconds", 0.01},
                    {"beo_3dof_seconds", 3529.88}};
  json floor;
  for (std::size_t c = 0; c < report.class_names.size(); ++c)
    floor[report.class_names[c]] = summary_json(report.floor_edt_by_class[c]);
  j["subspace_floor_edt"] = {{"per_class", floor}, {"total", summary_json(report.floor_edt_total)}};
  json modes = json::array();
  for (const auto& m : report.modes) {
    json mj;
    mj["mode"] = m.mode;
    mj["samples"] = m.samples;
    mj["failures"] = m.failures;
    mj["confusion"] = m.confusion;
    mj["total_accuracy"] = m.total_accuracy;
    json per;
    for (std::size_t c = 0; c < report.class_names.size(); ++c)
      per[report.class_names[c]] = {{"accuracy", m.class_accuracy[c]},
                                    {"naive", summary_json(m.naive_by_class[c])},
                                    {"edt", summary_json(m.edt_by_class[c])}};
    mj["per_class"] = per;
    mj["naive_total"] = summary_json(m.naive_total);
    mj["edt_total"] = summary_json(m.edt_total);
    if (m.estimates_pose) mj["pose_error_rad"] = summary_json(m.pose);
    mj["mean_seconds"] = m.mean_seconds;
    modes.push_back(mj);
  }
  j["modes"] = modes;
  return j.dump(2) + "\n";
}

std::string accuracy_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "method";
  for (const auto& c : report.class_names) out << ',' << c;
  out << ",total\n";
  out.precision(6);
  for (const auto& m : report.modes) {
    out << m.mode;
    for (double a : m.class_accuracy) out << ',' << a;
    out << ',' << m.total_accuracy << '\n';
  }
  return out.str();
}

std::string pose_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "method,n,mean,median,q1,q3,min,max\n";
  for (const auto& m : report.modes) {
    if (!m.estimates_pose) continue;
    const auto& s = m.pose;
    out << m.mode << ',' << s.n << ',' << s.mean << ',' << s.median << ',' << s.q1 << ',' << s.q3 << ',' << s.min << ','
        << s.max << '\n';
  }
  return out.str();
}

std::string completion_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "method,class,naive_mean,naive_median,edt_mean,edt_median\n";
  for (const auto& m : report.modes) {
    for (std::size_t c = 0; c < report.class_names.size(); ++c)
      out << m.mode << ',' << report.class_names[c] << ',' << m.naive_by_class[c].mean << ','
          << m.naive_by_class[c].median << ',' << m.edt_by_class[c].mean << ',' << m.edt_by_class[c].median << '\n';
    out << m.mode << ",total," << m.naive_total.mean << ',' << m.naive_total.median << ',' << m.edt_total.mean << ','
        << m.edt_total.median << '\n';
  }
  for (std::size_t c = 0; c < report.class_names.size(); ++c)
    out << "subspace-floor," << report.class_names[c] << ",,," << report.floor_edt_by_class[c].mean << ','
        << report.floor_edt_by_class[c].median << '\n';
  out << "subspace-floor,total,,," << report.floor_edt_total.mean << ',' << report.floor_edt_total.median << '\n';
  return out.str();
}

void write_report(const EvalReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  io::write_atomic((fs::path(dir) / "report.json").string(), report_json(report));
  io::write_atomic((fs::path(dir) / "accuracy.csv").string(), accuracy_csv(report));
  io::write_atomic((fs::path(dir) / "pose_error.csv").string(), pose_csv(report));
  io::write_atomic((fs::path(dir) / "completion.csv").string(), completion_csv(report));
}

PoseSearchConfig search_grid(std::size_t count) {
  const std::size_t directions = icosphere_directions(0).size();
  if (count == 0 || count % directions != 0)
    throw Error("rotation count must be a positive multiple of " + std::to_string(directions));
  return PoseSearchConfig::three_dof(0, static_cast<int>(count / directions));
}

BenchReport benchmark_runtime(const HbeoModel& model, const Dataset& ds, const std::vector<std::size_t>& renders,
                              const BenchConfig& cfg, const EvalConfig& eval) {
  if (cfg.repetitions < 3) throw Error("benchmark needs at least 3 repetitions");
  if (renders.empty()) throw Error("benchmark needs at least one sample input");
  if (cfg.rotation_counts.empty()) throw Error("benchmark needs at least one rotation count");
  const ThreadLimit single(1);
  const auto hbeo = make_predictor(model, EvalMode::kHbeo, eval);

  auto time_mean = [&](const Predictor& p) {
    for (std::size_t i : renders) (void)p(ds.renders[i]);  // warm-up, untimed
    double total = 0.0;
    for (int rep = 0; rep < cfg.repetitions; ++rep)
      for (std::size_t i : renders) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)p(ds.renders[i]);
        total += seconds_since(t0);
      }
    return total / double(cfg.repetitions * renders.size());
  };

  BenchReport rep;
  for (std::size_t count : cfg.rotation_counts) {
    EvalConfig e = eval;
    e.search = search_grid(count);
    BenchRow row;
    row.rotations = count;
    row.beo_seconds = time_mean(make_predictor(model, EvalMode::kBeoSearch, e));
    row.hbeo_seconds = time_mean(hbeo);
    rep.rows.push_back(row);
  }
  // Ordinary least squares of BEO seconds on |R|.
  const double n = double(rep.rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& r : rep.rows) {
    const double x = double(r.rotations), y = r.beo_seconds;
    sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
  }
  const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cxy = sxy - sx * sy / n;
  rep.slope = vx > 0 ? cxy / vx : 0.0;
  rep.intercept = (sy - rep.slope * sx) / n;
  rep.r2 = (vx > 0 && vy > 0) ? cxy * cxy / (vx * vy) : 1.0;
  const auto& last = rep.rows.back();
  rep.ratio_at_max = last.hbeo_seconds > 0 ? last.beo_seconds / last.hbeo_seconds : 0.0;
  return rep;
}

std::string bench_csv(const BenchReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "rotations,beo_search_seconds,hbeo_seconds,ratio\n";
  for (const auto& r : report.rows)
    out << r.rotations << ',' << r.beo_seconds << ',' << r.hbeo_seconds << ','
        << (r.hbeo_seconds > 0 ? r.beo_seconds / r.hbeo_seconds : 0.0) << '\n';
  return out.str();
}

}  // namespace hbeo
