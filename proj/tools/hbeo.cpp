// Command-line entry point: one pipeline stage per subcommand.
//
// Exit codes: 0 success, 1 usage error, 2 data or model error. Logs go to
// stderr; machine-readable results go to files (written atomically) or stdout.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hbeo/config.hpp"
#include "hbeo/error.hpp"
#include "hbeo/io.hpp"
#include "hbeo/model.hpp"
#include "hbeo/observation.hpp"
#include "hbeo/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hbeo;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log(const std::string& msg) { std::cerr << "[hbeo] " << msg << std::endl; }

// Options shared by the config-driven stages.
struct CommonOpts {
  std::string config;
  std::vector<std::pair<std::string, std::string>> aliases;  // filled from named flags
  std::vector<std::string> extras;                            // raw --dotted.key value pairs
};

std::vector<std::pair<std::string, std::string>> parse_extras(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw UsageError("option '" + a + "' needs a value");
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

RunConfig resolve(const CommonOpts& o) {
  auto overrides = o.aliases;
  for (auto& kv : parse_extras(o.extras)) overrides.push_back(kv);
  if (!o.config.empty() && !fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
  RunConfig cfg;
  try {
    cfg = load_config(o.config, overrides);
  } catch (const Error& e) {
    throw UsageError(e.what());  // bad keys, values or a missing seed are invocation errors
  }
  const auto echo = write_resolved_config(cfg, cfg.report_dir);
  log("resolved config written to " + echo);
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError(what + " not found: " + path);
}

EvalConfig eval_config(const RunConfig& cfg) {
  EvalConfig e;
  e.modes = cfg.eval_modes;
  e.search = search_grid(cfg.search_rotations);
  e.solver = cfg.solver;
  e.beo_search_limit = cfg.beo_search_limit;
  return e;
}

Dataset load_data(const RunConfig& cfg) {
  require_file((fs::path(cfg.data_dir) / "manifest.jsonl").string(), "dataset manifest");
  log("loading dataset from " + cfg.data_dir);
  return load_dataset(cfg.data_dir);
}

int cmd_gen_data(const RunConfig& cfg) {
  std::vector<std::string> names;
  const auto sources = dataset_sources(cfg.dataset, &names);
  log("generating " + std::to_string(sources.size()) + " objects across " + std::to_string(names.size()) + " classes");
  const auto ds = generate_dataset(sources, names, cfg.dataset);
  write_dataset(ds, cfg.data_dir);
  log("wrote " + std::to_string(ds.renders.size()) + " renders to " + cfg.data_dir);
  return 0;
}

int cmd_fit_subspace(const RunConfig& cfg) {
  const auto ds = load_data(cfg);
  auto model = fit_subspace_model(ds, cfg.subspace);
  for (const auto& s : model.subspaces)
    log("class " + ds.class_names[std::size_t(s.class_id)] + ": k=" + std::to_string(s.components()) +
        ", captured variance " + std::to_string(s.captured_variance));
  log("shared basis: d=" + std::to_string(model.basis.dimension()) + ", k=" + std::to_string(model.basis.rank()));
  model.round_to_storage_precision();
  save_model(cfg.model_path, model);
  log("model written to " + cfg.model_path);
  return 0;
}

int cmd_fit_gmm(const RunConfig& cfg) {
  require_file(cfg.model_path, "model");
  const auto ds = load_data(cfg);
  auto model = load_model(cfg.model_path);
  fit_gmms(model, ds, cfg.gmm);
  for (const auto& g : model.gmms)
    log("class " + ds.class_names[std::size_t(g.class_id)] + ": " + std::to_string(g.components.size()) + " components");
  model.round_to_storage_precision();
  save_model(cfg.model_path, model);
  log("model written to " + cfg.model_path);
  return 0;
}

int cmd_train_net(const RunConfig& cfg) {
  require_file(cfg.model_path, "model");
  const auto ds = load_data(cfg);
  auto model = load_model(cfg.model_path);
  NetworkTrainOptions opts;
  opts.spec = cfg.network;
  opts.optimizer = cfg.optimizer;
  opts.loss = cfg.loss;
  opts.init_seed = cfg.seed + 1;
  std::ostringstream csv;
  csv << "epoch,total,classification,orientation,projection,learning_rate\n";
  csv.precision(9);
  train_network(model, ds, opts, [&](const TrainProgress& p) {
    std::ostringstream line;
    line << "epoch " << p.epoch << ": loss " << p.mean_loss << " (ce " << p.terms.classification << ", pose "
         << p.terms.orientation << ", proj " << p.terms.projection << ")";
    log(line.str());
    csv << p.epoch << ',' << p.mean_loss << ',' << p.terms.classification << ',' << p.terms.orientation << ','
        << p.terms.projection << ',' << p.learning_rate << '\n';
  });
  model.round_to_storage_precision();
  save_model(cfg.model_path, model);
  fs::create_directories(cfg.report_dir);
  io::write_atomic((fs::path(cfg.report_dir) / "loss_curve.csv").string(), csv.str());
  log("model written to " + cfg.model_path);
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  require_file(cfg.model_path, "model");
  const auto ds = load_data(cfg);
  const auto model = load_model(cfg.model_path);
  const auto report = evaluate(ds, model, eval_config(cfg));
  write_report(report, cfg.report_dir);
  std::cout << accuracy_csv(report);
  for (const auto& m : report.modes) {
    std::ostringstream line;
    line << m.mode << ": accuracy " << m.total_accuracy << "%, edt " << m.edt_total.mean;
    if (m.estimates_pose) line << ", mean pose error " << m.pose.mean * 180.0 / 3.14159265358979 << " deg";
    line << ", " << m.failures << " failures";
    log(line.str());
  }
  log("report written to " + cfg.report_dir);
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  require_file(cfg.model_path, "model");
  const auto ds = load_data(cfg);
  const auto model = load_model(cfg.model_path);
  const auto test = ds.renders_in(Split::kTest);
  std::vector<std::size_t> samples;
  const std::size_t n = std::min(cfg.bench_samples, test.size());
  for (std::size_t i = 0; i < n; ++i) samples.push_back(test[i * test.size() / n]);
  const auto rep = benchmark_runtime(model, ds, samples, cfg.bench, eval_config(cfg));
  fs::create_directories(cfg.report_dir);
  io::write_atomic((fs::path(cfg.report_dir) / "timing.csv").string(), bench_csv(rep));
  json j = {{"slope_seconds_per_rotation", rep.slope},
            {"intercept_seconds", rep.intercept},
            {"r2", rep.r2},
            {"ratio_at_max", rep.ratio_at_max},
            {"reference", {{"hbeo_seconds", 0.01}, {"beo_3dof_seconds", 3529.88}}}};
  io::write_atomic((fs::path(cfg.report_dir) / "timing.json").string(), j.dump(2) + "\n");
  std::cout << bench_csv(rep);
  log("BEO/HBEO ratio at |R|=" + std::to_string(rep.rows.back().rotations) + ": " + std::to_string(rep.ratio_at_max) +
      ", linear fit R^2 " + std::to_string(rep.r2));
  return 0;
}

void write_completion(const std::string& out, const VoxelGrid& grid) {
  save_grid((fs::path(out) / "completion.hbvx").string(), grid);
  io::write_atomic((fs::path(out) / "completion.ply").string(), grid_to_ply(grid));
}

json coeffs_json(const Eigen::VectorXd& c) { return std::vector<double>(c.data(), c.data() + c.size()); }

int cmd_infer(const std::string& model_path, const std::string& depth_path, const std::string& out) {
  require_file(model_path, "model");
  require_file(depth_path, "depth image");
  const auto model = load_model(model_path);
  if (!model.network) throw Error("model has no trained network; run train-net first");
  const auto depth = load_depth_pgm(depth_path);
  const auto inf = infer_joint(*model.network, depth, model.basis);
  fs::create_directories(out);
  const auto& aa = inf.pose.axis_angle();
  json j = {{"class", model.class_names[inf.class_index]},
            {"class_index", inf.class_index},
            {"classes", model.class_names},
            {"posterior", coeffs_json(inf.posterior)},
            {"axis_angle", {aa.x(), aa.y(), aa.z()}},
            {"angle_rad", inf.pose.angle()},
            {"coefficients", coeffs_json(inf.coefficients)}};
  io::write_atomic((fs::path(out) / "prediction.json").string(), j.dump(2) + "\n");
  write_completion(out, inf.completion);
  std::cout << j.dump() << "\n";
  log("class " + model.class_names[inf.class_index] + ", outputs in " + out);
  return 0;
}

int cmd_complete(const std::string& model_path, const std::string& depth_path, const std::string& grid_path,
                 const std::vector<double>& pose, double lambda, const std::string& out) {
  require_file(model_path, "model");
  const auto model = load_model(model_path);
  Eigen::VectorXd coeffs;
  if (!grid_path.empty()) {
    require_file(grid_path, "voxel grid");
    coeffs = project(load_grid(grid_path), model.basis);
  } else {
    if (depth_path.empty()) throw UsageError("complete needs --depth (with --pose) or --grid");
    require_file(depth_path, "depth image");
    if (pose.size() != 3) throw UsageError("--pose takes three axis-angle components");
    DepthFileInfo info;
    const auto depth = load_depth_pgm(depth_path, &info);
    const auto obs =
        carve_partial_observation(depth, Rotation(Eigen::Vector3d(pose[0], pose[1], pose[2])), info.camera, model.resolution);
    SolverConfig solver;
    solver.lasso_lambda = lambda;
    coeffs = solve_partial_projection(obs, model.basis, solver);
    log("known voxels: " + std::to_string(obs.known_count()) + " of " + std::to_string(obs.grid_size()));
  }
  const auto grid = back_project(coeffs, model.basis, true);
  fs::create_directories(out);
  io::write_atomic((fs::path(out) / "coefficients.json").string(), json(coeffs_json(coeffs)).dump() + "\n");
  write_completion(out, grid);
  log("completed grid has " + std::to_string(grid.occupied_count()) + " occupied voxels; outputs in " + out);
  return 0;
}

int cmd_inspect(const std::string& path) {
  require_file(path, "file");
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "HBVX") {
    const auto g = decode_grid(bytes);
    std::cout << "voxel grid\nresolution " << g.resolution() << "\nbinary " << (g.binary() ? "yes" : "no")
              << "\noccupied " << g.occupied_count() << "\n";
    return 0;
  }
  const auto m = decode_model(bytes);
  std::cout << "d " << m.basis.dimension() << "\nk " << m.basis.rank() << "\nr " << m.resolution << "\nclasses";
  for (const auto& c : m.class_names) std::cout << ' ' << c;
  std::cout << "\northonormality_error " << m.basis.orthonormality_error() << "\n";
  for (const auto& s : m.subspaces)
    std::cout << "subspace " << m.class_names[std::size_t(s.class_id)] << " k_i " << s.components() << " captured "
              << s.captured_variance << " noise " << s.noise_variance << "\n";
  if (m.gmms.empty()) std::cout << "gmm none\n";
  for (const auto& g : m.gmms)
    std::cout << "gmm " << m.class_names[std::size_t(g.class_id)] << " components " << g.components.size() << " floor "
              << g.covariance_floor << "\n";
  if (m.network) std::cout << "network\n" << m.network->spec().layer_table();
  else std::cout << "network none\n";
  return 0;
}

void add_common(CLI::App* sub, CommonOpts& o, std::vector<std::string>& alias_storage, bool eval_flags) {
  sub->add_option("--config", o.config, "JSON config file");
  alias_storage.resize(6);
  sub->add_option("--seed", alias_storage[0], "seed (overrides config)");
  sub->add_option("--data", alias_storage[1], "dataset directory (paths.data_dir)");
  sub->add_option("--model", alias_storage[2], "model file (paths.model)");
  sub->add_option("--report", alias_storage[3], "report directory (paths.report_dir)");
  if (eval_flags) {
    sub->add_option("--modes", alias_storage[4], "comma-separated: hbeo,beo-known-pose,beo-search");
    sub->add_option("--R", alias_storage[5], "BEO search rotation count (multiple of 12)");
  }
  sub->allow_extras();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid Bayesian Eigenobject pipeline"};
  app.require_subcommand(1);
  app.footer("Any config field can be overridden as --section.key value, e.g. --optimizer.epochs 5.");

  CommonOpts common;
  std::vector<std::string> alias;
  std::map<std::string, CLI::App*> staged;
  for (const char* name : {"gen-data", "fit-subspace", "fit-gmm", "train-net", "eval", "bench"}) {
    staged[name] = app.add_subcommand(name, std::string("pipeline stage: ") + name);
  }
  staged["gen-data"]->description("render the procedural (or ModelNet) dataset");
  staged["fit-subspace"]->description("fit per-class subspaces and the shared basis");
  staged["fit-gmm"]->description("fit per-class coefficient mixtures");
  staged["train-net"]->description("train the joint class/pose/projection network");
  staged["eval"]->description("evaluate on the test split");
  staged["bench"]->description("time single-shot inference against pose search");
  std::vector<std::vector<std::string>> alias_store(staged.size());
  std::size_t ai = 0;
  for (auto& [name, sub] : staged) add_common(sub, common, alias_store[ai++], name == "eval" || name == "bench");

  std::string model_path, depth_path, out_dir = "out", grid_path, inspect_path;
  std::vector<double> pose;
  double lambda = 0.0;
  auto* infer = app.add_subcommand("infer", "single-shot class, pose and completion from one depth image");
  infer->add_option("--model", model_path, "model file")->required();
  infer->add_option("--depth", depth_path, "16-bit PGM depth image")->required();
  infer->add_option("--out", out_dir, "output directory");
  auto* complete = app.add_subcommand("complete", "complete an object from a posed depth image or a full grid");
  complete->add_option("--model", model_path, "model file")->required();
  complete->add_option("--depth", depth_path, "16-bit PGM depth image");
  complete->add_option("--pose", pose, "axis-angle pose of the object in the image")->expected(3)->delimiter(',');
  complete->add_option("--grid", grid_path, "HBVX grid to project instead of a depth image");
  complete->add_option("--lambda", lambda, "L1 weight for the regularized solve");
  complete->add_option("--out", out_dir, "output directory");
  auto* inspect = app.add_subcommand("inspect", "print model or grid metadata");
  inspect->add_option("path", inspect_path, "model (.hbeo) or grid (.hbvx)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (infer->parsed()) return cmd_infer(model_path, depth_path, out_dir);
    if (complete->parsed()) return cmd_complete(model_path, depth_path, grid_path, pose, lambda, out_dir);
    if (inspect->parsed()) return cmd_inspect(inspect_path);

    ai = 0;
    for (auto& [name, sub] : staged) {
      auto& a = alias_store[ai++];
      if (!sub->parsed()) continue;
      const char* keys[6] = {"seed", "paths.data_dir", "paths.model", "paths.report_dir", "eval.modes", "search.rotations"};
      for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].empty()) common.aliases.emplace_back(keys[i], a[i]);
      common.extras = sub->remaining();
      const auto t0 = std::chrono::steady_clock::now();
      const RunConfig cfg = resolve(common);
      int rc = 0;
      if (name == "gen-data") rc = cmd_gen_data(cfg);
      else if (name == "fit-subspace") rc = cmd_fit_subspace(cfg);
      else if (name == "fit-gmm") rc = cmd_fit_gmm(cfg);
      else if (name == "train-net") rc = cmd_train_net(cfg);
      else if (name == "eval") rc = cmd_eval(cfg);
      else if (name == "bench") rc = cmd_bench(cfg);
      log(name + " finished in " +
          std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
      return rc;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
