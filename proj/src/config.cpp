#include "hbeo/config.hpp"

#include <filesystem>
#include <sstream>

#include "hbeo/error.hpp"
#include "hbeo/io.hpp"

namespace hbeo {

using nlohmann::json;

json default_config_json() {
  return json::parse(R"({
    "seed": null,
    "paths": {"data_dir": "data", "model": "model.hbeo", "report_dir": "reports"},
    "dataset": {
      "resolution": 16, "image_width": 64, "image_height": 48, "camera_distance": 2.0,
      "train_per_class": 400, "test_per_class": 20, "views_per_object": 10, "test_views_per_object": 25,
      "max_angle_deg": 150.0, "modelnet_dir": ""
    },
    "subspace": {
      "variance_target": 0.6, "max_components": 30, "em_max_iters": 300, "em_rel_tolerance": 1e-7,
      "basis_prior_variance": 1.0, "mean_prior_variance": 1.0
    },
    "gmm": {"n_components": 2, "covariance_floor": 0.0, "max_iters": 200, "tolerance": 1e-10},
    "solver": {"lasso_lambda": 0.0, "tolerance": 1e-12, "max_iterations": 100000},
    "search": {"rotations": 1152},
    "network": {"conv_channels": [8, 16, 32, 64], "kernel": 5, "fc": [512, 256, 128]},
    "optimizer": {
      "learning_rate": 0.003, "momentum": 0.9, "batch_size": 32, "epochs": 30,
      "decay_at": [0.6, 0.8], "decay_factor": 0.1
    },
    "loss": {"classification": 1.0, "orientation": 5.0, "projection": 1.0},
    "eval": {"modes": ["hbeo", "beo-known-pose", "beo-search"], "beo_search_limit": 60},
    "bench": {"rotations": [72, 288, 576, 1152], "repetitions": 3, "samples": 3}
  })");
}

namespace {

const char* kind(const json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

// Values must keep the default's kind; a null default (the seed) takes an unsigned integer.
void check_kind(const json& def, const json& v, const std::string& key) {
  if (def.is_null()) {
    if (!v.is_number_unsigned()) throw Error("config key '" + key + "' must be a non-negative integer");
    return;
  }
  if (std::string(kind(def)) != kind(v))
    throw Error("config key '" + key + "' must be a " + kind(def) + ", got " + kind(v));
  if (def.is_number_integer() && !v.is_number_integer())
    throw Error("config key '" + key + "' must be an integer");
}

void merge_checked(json& base, const json& in, const std::string& prefix) {
  if (!in.is_object()) throw Error("config " + (prefix.empty() ? std::string("root") : "'" + prefix + "'") + " must be an object");
  for (const auto& [k, v] : in.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw Error("unknown config key '" + key + "'");
    json& slot = base[k];
    if (slot.is_object()) {
      merge_checked(slot, v, key);
    } else {
      check_kind(slot, v, key);
      slot = v;
    }
  }
}

json parse_override(const json& def, const std::string& key, const std::string& text) {
  if (def.is_string()) return text;
  if (def.is_array()) {
    if (!text.empty() && text.front() == '[') return json::parse(text, nullptr, false);
    json arr = json::array();
    const bool strings = !def.empty() && def.front().is_string();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (strings) arr.push_back(item);
      else {
        json v = json::parse(item, nullptr, false);
        if (v.is_discarded()) throw Error("config key '" + key + "': cannot parse '" + item + "'");
        arr.push_back(v);
      }
    }
    return arr;
  }
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) throw Error("config key '" + key + "': cannot parse value '" + text + "'");
  return v;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

}  // namespace

RunConfig config_from_json(const json& j) {
  if (!j.contains("seed") || j.at("seed").is_null()) throw Error("config is missing the mandatory 'seed'");
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data_dir = get<std::string>(j, "paths", "data_dir");
    c.model_path = get<std::string>(j, "paths", "model");
    c.report_dir = get<std::string>(j, "paths", "report_dir");

    auto& d = c.dataset;
    d.resolution = get<int>(j, "dataset", "resolution");
    d.camera = Camera::with_image_size(get<int>(j, "dataset", "image_width"), get<int>(j, "dataset", "image_height"),
                                       get<double>(j, "dataset", "camera_distance"));
    d.train_per_class = get<int>(j, "dataset", "train_per_class");
    d.test_per_class = get<int>(j, "dataset", "test_per_class");
    d.views_per_object = get<int>(j, "dataset", "views_per_object");
    d.test_views_per_object = get<int>(j, "dataset", "test_views_per_object");
    d.max_angle_deg = get<double>(j, "dataset", "max_angle_deg");
    d.modelnet_dir = get<std::string>(j, "dataset", "modelnet_dir");
    d.seed = c.seed;

    auto& s = c.subspace;
    s.variance_target = get<double>(j, "subspace", "variance_target");
    s.max_components = get<int>(j, "subspace", "max_components");
    s.em_max_iters = get<int>(j, "subspace", "em_max_iters");
    s.em_rel_tolerance = get<double>(j, "subspace", "em_rel_tolerance");
    s.basis_prior_variance = get<double>(j, "subspace", "basis_prior_variance");
    s.mean_prior_variance = get<double>(j, "subspace", "mean_prior_variance");

    c.gmm.n_components = get<int>(j, "gmm", "n_components");
    c.gmm.covariance_floor = get<double>(j, "gmm", "covariance_floor");
    c.gmm.max_iters = get<int>(j, "gmm", "max_iters");
    c.gmm.tolerance = get<double>(j, "gmm", "tolerance");
    c.gmm.seed = c.seed;

    c.solver.lasso_lambda = get<double>(j, "solver", "lasso_lambda");
    c.solver.tolerance = get<double>(j, "solver", "tolerance");
    c.solver.max_iterations = get<int>(j, "solver", "max_iterations");

    c.search_rotations = get<std::size_t>(j, "search", "rotations");

    const auto channels = get<std::vector<int>>(j, "network", "conv_channels");
    const int kernel = get<int>(j, "network", "kernel");
    c.network.conv.clear();
    for (int ch : channels) c.network.conv.push_back({ch, kernel});
    c.network.fc = get<std::vector<int>>(j, "network", "fc");
    c.network.input_width = d.camera.width;
    c.network.input_height = d.camera.height;

    auto& o = c.optimizer;
    o.learning_rate = get<double>(j, "optimizer", "learning_rate");
    o.momentum = get<double>(j, "optimizer", "momentum");
    o.batch_size = get<int>(j, "optimizer", "batch_size");
    o.epochs = get<int>(j, "optimizer", "epochs");
    o.decay_at = get<std::vector<double>>(j, "optimizer", "decay_at");
    o.decay_factor = get<double>(j, "optimizer", "decay_factor");
    o.seed = c.seed + 2;

    c.loss.classification = get<double>(j, "loss", "classification");
    c.loss.orientation = get<double>(j, "loss", "orientation");
    c.loss.projection = get<double>(j, "loss", "projection");

    for (const auto& m : get<std::vector<std::string>>(j, "eval", "modes")) c.eval_modes.push_back(parse_mode(m));
    c.beo_search_limit = get<std::size_t>(j, "eval", "beo_search_limit");

    c.bench.rotation_counts = get<std::vector<std::size_t>>(j, "bench", "rotations");
    c.bench.repetitions = get<int>(j, "bench", "repetitions");
    c.bench_samples = get<std::size_t>(j, "bench", "samples");
  } catch (const json::exception& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }

  c.dataset.validate();
  c.subspace.validate();
  c.solver.validate();
  c.optimizer.validate();
  c.loss.validate();
  if (c.network.conv.size() != NetworkSpec::kConvLayers) throw Error("network.conv_channels needs exactly 4 entries");
  if (c.network.fc.size() != NetworkSpec::kFcLayers) throw Error("network.fc needs exactly 3 entries");
  (void)search_grid(c.search_rotations);
  for (std::size_t r : c.bench.rotation_counts) (void)search_grid(r);
  if (c.bench.repetitions < 3) throw Error("bench.repetitions must be at least 3");
  if (c.bench_samples < 1) throw Error("bench.samples must be at least 1");
  return c;
}

json RunConfig::to_json() const {
  json j = default_config_json();
  j["seed"] = seed;
  j["paths"] = {{"data_dir", data_dir}, {"model", model_path}, {"report_dir", report_dir}};
  auto& d = j["dataset"];
  d["resolution"] = dataset.resolution;
  d["image_width"] = dataset.camera.width;
  d["image_height"] = dataset.camera.height;
  d["camera_distance"] = dataset.camera.distance;
  d["train_per_class"] = dataset.train_per_class;
  d["test_per_class"] = dataset.test_per_class;
  d["views_per_object"] = dataset.views_per_object;
  d["test_views_per_object"] = dataset.test_views_per_object;
  d["max_angle_deg"] = dataset.max_angle_deg;
  d["modelnet_dir"] = dataset.modelnet_dir;
  j["subspace"] = {{"variance_target", subspace.variance_target},
                   {"max_components", subspace.max_components},
                   {"em_max_iters", subspace.em_max_iters},
                   {"em_rel_tolerance", subspace.em_rel_tolerance},
                   {"basis_prior_variance", subspace.basis_prior_variance},
                   {"mean_prior_variance", subspace.mean_prior_variance}};
  j["gmm"] = {{"n_components", gmm.n_components},
              {"covariance_floor", gmm.covariance_floor},
              {"max_iters", gmm.max_iters},
              {"tolerance", gmm.tolerance}};
  j["solver"] = {{"lasso_lambda", solver.lasso_lambda},
                 {"tolerance", solver.tolerance},
                 {"max_iterations", solver.max_iterations}};
  j["search"] = {{"rotations", search_rotations}};
  std::vector<int> channels;
  for (const auto& c : network.conv) channels.push_back(c.out_channels);
  j["network"] = {{"conv_channels", channels},
                  {"kernel", network.conv.empty() ? 5 : network.conv.front().kernel},
                  {"fc", network.fc}};
  j["optimizer"] = {{"learning_rate", optimizer.learning_rate}, {"momentum", optimizer.momentum},
                    {"batch_size", optimizer.batch_size},       {"epochs", optimizer.epochs},
                    {"decay_at", optimizer.decay_at},           {"decay_factor", optimizer.decay_factor}};
  j["loss"] = {{"classification", loss.classification},
               {"orientation", loss.orientation},
               {"projection", loss.projection}};
  std::vector<std::string> modes;
  for (EvalMode m : eval_modes) modes.push_back(mode_name(m));
  j["eval"] = {{"modes", modes}, {"beo_search_limit", beo_search_limit}};
  j["bench"] = {{"rotations", bench.rotation_counts}, {"repetitions", bench.repetitions}, {"samples", bench_samples}};
  return j;
}

RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = default_config_json();
  if (!path.empty()) {
    json file = json::parse(io::read_text(path), nullptr, false);
    if (file.is_discarded()) throw Error("config file is not valid JSON: " + path);
    merge_checked(j, file, "");
  }
  for (const auto& [key, text] : overrides) {
    json* slot = &j;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!slot->is_object() || !slot->contains(part)) throw Error("unknown config key '" + key + "'");
      slot = &(*slot)[part];
    }
    if (slot->is_object()) throw Error("config key '" + key + "' names a section, not a value");
    json v = parse_override(*slot, key, text);
    if (v.is_discarded()) throw Error("config key '" + key + "': cannot parse value '" + text + "'");
    check_kind(*slot, v, key);
    *slot = v;
  }
  return config_from_json(j);
}

std::string write_resolved_config(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / "resolved_config.json").string();
  io::write_atomic(path, cfg.to_json().dump(2) + "\n");
  return path;
}

}  // namespace hbeo
