#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hbeo/beo.hpp"
#include "hbeo/dataset.hpp"
#include "hbeo/net.hpp"
#include "hbeo/pipeline.hpp"
#include "hbeo/subspace.hpp"
#include "json.hpp"

namespace hbeo {

/// Fully resolved settings for one CLI run. Every stage derives its seeds from
/// `seed`; there is no wall-clock seeding.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string model_path = "model.hbeo";
  std::string report_dir = "reports";

  DatasetConfig dataset;
  VBPCAConfig subspace;
  GmmFitOptions gmm;
  SolverConfig solver;
  std::size_t search_rotations = 1152;
  NetworkSpec network;
  OptimizerConfig optimizer;
  LossWeights loss;
  std::vector<EvalMode> eval_modes;
  std::size_t beo_search_limit = 0;
  BenchConfig bench;
  std::size_t bench_samples = 3;

  nlohmann::json to_json() const;
  bool operator==(const RunConfig& o) const { return to_json() == o.to_json(); }
};

/// Built-in defaults as JSON; `seed` is null and must be supplied.
nlohmann::json default_config_json();

/// File values override defaults, then each `--dotted.key value` override
/// replaces one field. Unknown keys and a missing seed throw Error.
RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides);
RunConfig config_from_json(const nlohmann::json& j);

/// Writes `resolved_config.json` into `dir`; it re-loads to an identical config.
std::string write_resolved_config(const RunConfig& cfg, const std::string& dir);

}  // namespace hbeo
