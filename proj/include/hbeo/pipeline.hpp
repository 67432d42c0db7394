#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hbeo/beo.hpp"
#include "hbeo/dataset.hpp"
#include "hbeo/model.hpp"
#include "hbeo/net.hpp"

namespace hbeo {

// ---- completion metrics ----

/// 1 - ||o - o_hat||_2 / d, with d the voxel count. Equals 1 iff the grids match.
double completion_score_naive(const VoxelGrid& truth, const VoxelGrid& estimate);

/// ||D - D_hat||_2 over the flattened distance fields. Lower is better.
double completion_score_edt(const VoxelGrid& truth, const VoxelGrid& estimate);

/// As completion_score_edt, but an empty estimate scores against a field of
/// r*sqrt(3) everywhere (farther than any in-grid distance) instead of throwing.
double completion_score_edt_or_worst(const VoxelGrid& truth, const VoxelGrid& estimate);

// ---- model fitting ----

/// Per-class subspaces on canonical training grids, merged into the shared basis.
HbeoModel fit_subspace_model(const Dataset& ds, const VBPCAConfig& cfg);

/// Per-class mixtures over the projections of the training objects.
void fit_gmms(HbeoModel& model, const Dataset& ds, const GmmFitOptions& opts);

struct NetworkTrainOptions {
  NetworkSpec spec;  // head sizes are overwritten from the model
  OptimizerConfig optimizer;
  LossWeights loss;
  std::uint64_t init_seed = 1;
};

/// Trains the joint network on the training split and stores it in the model.
std::vector<double> train_network(HbeoModel& model, const Dataset& ds, const NetworkTrainOptions& opts,
                                  const std::function<void(const TrainProgress&)>& on_epoch = {});

// ---- evaluation ----

enum class EvalMode { kHbeo, kBeoKnownPose, kBeoSearch };

const char* mode_name(EvalMode m);
EvalMode parse_mode(const std::string& s);

struct Prediction {
  int label = -1;  // -1 marks a failed inference
  Rotation pose;
  VoxelGrid completion;
};

using Predictor = std::function<Prediction(const RenderRecord&)>;

struct Summary {
  std::size_t n = 0;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
};

Summary summarize(std::vector<double> values);

struct ModeReport {
  std::string mode;
  std::size_t samples = 0;
  std::size_t failures = 0;
  // confusion[truth][pred]; the last column counts failed inferences.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<double> class_accuracy;  // percent
  double total_accuracy = 0.0;         // percent
  bool estimates_pose = false;
  std::vector<double> pose_errors;  // radians, per sample in evaluation order
  Summary pose;
  std::vector<Summary> naive_by_class, edt_by_class;
  Summary naive_total, edt_total;
  double mean_seconds = 0.0;
};

/// Runs `predict` on each listed render in parallel and reduces in list order.
/// Failures (label -1 or a thrown error) count as misclassified with error pi
/// and an empty completion.
ModeReport evaluate_predictor(const Dataset& ds, const std::vector<std::size_t>& renders, const Predictor& predict,
                              const std::string& mode, bool estimates_pose);

struct EvalConfig {
  std::vector<EvalMode> modes = {EvalMode::kHbeo};
  PoseSearchConfig search;  // empty selects the default 1152-candidate grid
  SolverConfig solver;
  PriorConfig priors;        // empty class priors select uniform
  std::size_t beo_search_limit = 0;  // evenly spaced subsample of test renders; 0 uses all
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<ModeReport> modes;
  // Direct in-subspace reconstruction of each test render's ground truth.
  std::vector<Summary> floor_edt_by_class;
  Summary floor_edt_total;
};

/// Predictor for one mode; BEO modes carve the render's depth image.
Predictor make_predictor(const HbeoModel& model, EvalMode mode, const EvalConfig& cfg);

EvalReport evaluate(const Dataset& ds, const HbeoModel& model, const EvalConfig& cfg);

std::string report_json(const EvalReport& report);
/// Per-class and total accuracy, one row per mode.
std::string accuracy_csv(const EvalReport& report);
/// Pose-error quartiles per mode (radians), for box plots.
std::string pose_csv(const EvalReport& report);
/// Per-class completion means and medians for both scores.
std::string completion_csv(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& dir);

// ---- runtime benchmark ----

/// Three-DOF candidate grid of `count` rotations (a multiple of 12).
PoseSearchConfig search_grid(std::size_t count);

struct BenchConfig {
  std::vector<std::size_t> rotation_counts = {72, 288, 576, 1152};
  int repetitions = 3;
};

struct BenchRow {
  std::size_t rotations = 0;
  double beo_seconds = 0.0;   // mean per query
  double hbeo_seconds = 0.0;  // mean per query, measured alongside
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double slope = 0.0, intercept = 0.0, r2 = 0.0;  // least-squares fit of BEO time against |R|
  double ratio_at_max = 0.0;                      // BEO / HBEO at the largest |R|
};

/// Single-threaded wall-clock timing of HBEO single-shot inference against BEO
/// search; one untimed warm-up per method precedes the repetitions.
BenchReport benchmark_runtime(const HbeoModel& model, const Dataset& ds, const std::vector<std::size_t>& renders,
                              const BenchConfig& cfg, const EvalConfig& eval = {});

std::string bench_csv(const BenchReport& report);

}  // namespace hbeo
