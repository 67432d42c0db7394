#include "hbeo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "hbeo/error.hpp"
#include "hbeo/io.hpp"
#include "hbeo/shapes.hpp"
#include "json.hpp"

namespace hbeo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t salt) {
  return splitmix(splitmix(splitmix(seed ^ salt) + a) + b);
}

json camera_json(const Camera& c) {
  return {{"width", c.width}, {"height", c.height}, {"focal", c.focal}, {"distance", c.distance}};
}

Camera camera_from(const json& j) {
  Camera c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.focal = j.at("focal").get<double>();
  c.distance = j.at("distance").get<double>();
  return c;
}

// Runs body(i) for i in [0, n) in parallel; the first failure (lowest index) is rethrown.
template <typename F>
void parallel_for_checked(std::size_t n, F&& body) {
  std::vector<std::string> errors(n);
  std::vector<char> failed(n, 0);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (const std::exception& e) {
      failed[static_cast<std::size_t>(i)] = 1;
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (failed[i]) throw Error(errors[i]);
}

}  // namespace

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split '" + s + "'");
}

void DatasetConfig::validate() const {
  if (resolution < 2) throw Error("dataset resolution must be at least 2");
  if (train_per_class < 2 || test_per_class < 1)
    throw Error("every class needs at least 2 train objects and 1 test object");
  if (views_per_object < 1 || test_views_per_object < 1) throw Error("views per object must be at least 1");
  if (!(max_angle_deg >= 0 && max_angle_deg <= 180)) throw Error("max pose angle must lie in [0, 180] degrees");
  if (camera.width < 1 || camera.height < 1 || !(camera.focal > 0) || !(camera.distance > 0))
    throw Error("invalid camera");
}

std::vector<std::size_t> Dataset::renders_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < renders.size(); ++i)
    if (objects[renders[i].object].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::objects_in(Split s, int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (objects[i].split == s && objects[i].label == label) out.push_back(i);
  return out;
}

Rotation sample_pose(std::uint64_t seed, double max_angle_rad) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::Vector3d axis;
  do {
    axis = Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
  } while (axis.norm() < 1e-9);
  const double angle = std::uniform_real_distribution<double>(0.0, max_angle_rad)(rng);
  return Rotation(axis.normalized() * angle);
}

std::vector<LabeledMesh> dataset_sources(const DatasetConfig& cfg, std::vector<std::string>* class_names) {
  cfg.validate();
  std::vector<LabeledMesh> out;
  std::vector<std::string> names;
  if (cfg.modelnet_dir.empty()) {
    names = procedural_class_names();
    for (int c = 0; c < kShapeFamilies; ++c) {
      const int total = cfg.train_per_class + cfg.test_per_class;
      for (int i = 0; i < total; ++i) {
        const Split split = i < cfg.train_per_class ? Split::kTrain : Split::kTest;
        std::ostringstream name;
        name << names[std::size_t(c)] << '_' << split_name(split) << '_' << std::setw(3) << std::setfill('0')
             << (split == Split::kTrain ? i : i - cfg.train_per_class);
        out.push_back({name.str(), c, split,
                       make_procedural_shape(static_cast<ShapeFamily>(c), mix(cfg.seed, std::uint64_t(c), std::uint64_t(i), 0x5A))});
      }
    }
  } else {
    const fs::path root(cfg.modelnet_dir);
    if (!fs::is_directory(root)) throw Error("ModelNet directory not found: " + cfg.modelnet_dir);
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.size() < 2) throw Error("ModelNet directory needs at least two class folders");
    for (std::size_t c = 0; c < names.size(); ++c) {
      for (Split split : {Split::kTrain, Split::kTest}) {
        const fs::path sub = root / names[c] / split_name(split);
        if (!fs::is_directory(sub)) throw Error("missing split folder: " + sub.string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(sub))
          if (e.is_regular_file() && e.path().extension() == ".off") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        const std::size_t cap = std::size_t(split == Split::kTrain ? cfg.train_per_class : cfg.test_per_class);
        if (files.empty()) throw Error("no OFF files in " + sub.string());
        if (files.size() > cap) files.resize(cap);
        for (const auto& f : files)
          out.push_back({names[c] + "_" + split_name(split) + "_" + f.stem().string(), static_cast<int>(c), split,
                         load_off_file(f.string())});
      }
    }
  }
  if (class_names) *class_names = names;
  return out;
}

Dataset generate_dataset(const std::vector<LabeledMesh>& sources, const std::vector<std::string>& class_names,
                         const DatasetConfig& cfg) {
  cfg.validate();
  if (class_names.size() < 2) throw Error("dataset needs at least two classes");
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    int train = 0, test = 0;
    for (const auto& s : sources)
      if (s.label == static_cast<int>(c)) (s.split == Split::kTrain ? train : test)++;
    if (train < 1 || test < 1) throw Error("class '" + class_names[c] + "' must appear in both train and test splits");
  }

  Dataset ds;
  ds.class_names = class_names;
  ds.resolution = cfg.resolution;
  ds.seed = cfg.seed;
  ds.objects.resize(sources.size());
  parallel_for_checked(sources.size(), [&](std::size_t i) {
    const auto& s = sources[i];
    if (s.label < 0 || s.label >= static_cast<int>(class_names.size()))
      throw Error("object " + s.name + " has an out-of-range label");
    ObjectRecord& o = ds.objects[i];
    o.name = s.name;
    o.label = s.label;
    o.split = s.split;
    o.mesh = s.mesh;
    normalize_to_unit_cube(o.mesh);
    try {
      o.grid = voxelize(o.mesh, cfg.resolution);
    } catch (const Error& e) {
      throw Error("object " + s.name + ": " + e.what());
    }
  });

  const double max_angle = cfg.max_angle_deg * std::numbers::pi / 180.0;
  for (std::size_t o = 0; o < ds.objects.size(); ++o) {
    const int views = ds.objects[o].split == Split::kTrain ? cfg.views_per_object : cfg.test_views_per_object;
    for (int v = 0; v < views; ++v) {
      RenderRecord r;
      std::ostringstream id;
      id << ds.objects[o].name << "_v" << std::setw(3) << std::setfill('0') << v;
      r.render_id = id.str();
      r.object = o;
      r.pose = sample_pose(mix(cfg.seed, o, std::uint64_t(v), 0xD1), max_angle);
      r.camera = cfg.camera;
      ds.renders.push_back(std::move(r));
    }
  }
  parallel_for_checked(ds.renders.size(), [&](std::size_t i) {
    RenderRecord& r = ds.renders[i];
    try {
      r.depth = quantize_depth(render_depth(ds.objects[r.object].mesh, r.pose, r.camera));
    } catch (const Error& e) {
      throw Error("render " + r.render_id + " (object " + ds.objects[r.object].name + "): " + e.what());
    }
  });
  return ds;
}

std::string manifest_line(const Dataset& ds, const RenderRecord& r) {
  const auto& o = ds.objects[r.object];
  const auto& aa = r.pose.axis_angle();
  json j = {{"mesh", "meshes/" + o.name + ".off"},
            {"class", ds.class_names[std::size_t(o.label)]},
            {"split", split_name(o.split)},
            {"render_id", r.render_id},
            {"axis_angle", {aa.x(), aa.y(), aa.z()}},
            {"camera", camera_json(r.camera)},
            {"depth", "depth/" + r.render_id + ".pgm"}};
  return j.dump();
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "meshes");
  fs::create_directories(root / "depth");
  json meta = {{"seed", ds.seed}, {"resolution", ds.resolution}, {"classes", ds.class_names}};
  json objs = json::array();
  for (const auto& o : ds.objects) {
    objs.push_back({{"name", o.name}, {"class", ds.class_names[std::size_t(o.label)]}, {"split", split_name(o.split)},
                    {"mesh", "meshes/" + o.name + ".off"}});
    io::write_atomic((root / "meshes" / (o.name + ".off")).string(), to_off(o.mesh));
  }
  meta["objects"] = objs;
  std::string manifest;
  for (const auto& r : ds.renders) {
    save_depth_pgm((root / "depth" / (r.render_id + ".pgm")).string(), r.depth, r.camera);
    manifest += manifest_line(ds, r) + "\n";
  }
  io::write_atomic((root / "manifest.jsonl").string(), manifest);
  io::write_atomic((root / "dataset.json").string(), meta.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  json meta;
  try {
    meta = json::parse(io::read_text((root / "dataset.json").string()));
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset.json: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.resolution = meta.at("resolution").get<int>();
    ds.class_names = meta.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("dataset.json: " + std::string(e.what()));
  }
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) class_index[ds.class_names[i]] = static_cast<int>(i);
  std::map<std::string, std::size_t> by_mesh;
  for (const auto& oj : meta.at("objects")) {
    ObjectRecord o;
    o.name = oj.at("name").get<std::string>();
    const auto cls = oj.at("class").get<std::string>();
    if (!class_index.count(cls)) throw FormatError("object " + o.name + " has unknown class " + cls);
    o.label = class_index[cls];
    o.split = parse_split(oj.at("split").get<std::string>());
    const auto mesh_rel = oj.at("mesh").get<std::string>();
    by_mesh[mesh_rel] = ds.objects.size();
    o.mesh = load_off_file((root / mesh_rel).string(), false);
    ds.objects.push_back(std::move(o));
  }
  parallel_for_checked(ds.objects.size(),
                       [&](std::size_t i) { ds.objects[i].grid = voxelize(ds.objects[i].mesh, ds.resolution); });

  std::istringstream lines(io::read_text((root / "manifest.jsonl").string()));
  std::string line;
  int number = 0;
  std::vector<std::string> depth_paths;
  while (std::getline(lines, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      RenderRecord r;
      r.render_id = j.at("render_id").get<std::string>();
      const auto mesh_rel = j.at("mesh").get<std::string>();
      if (!by_mesh.count(mesh_rel)) throw FormatError("unknown mesh " + mesh_rel);
      r.object = by_mesh[mesh_rel];
      const auto aa = j.at("axis_angle").get<std::vector<double>>();
      if (aa.size() != 3) throw FormatError("axis_angle must have 3 entries");
      r.pose = Rotation(Eigen::Vector3d(aa[0], aa[1], aa[2]));
      r.camera = camera_from(j.at("camera"));
      depth_paths.push_back((root / j.at("depth").get<std::string>()).string());
      ds.renders.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError("manifest: " + std::string(e.what()), number);
    }
  }
  parallel_for_checked(ds.renders.size(), [&](std::size_t i) { ds.renders[i].depth = load_depth_pgm(depth_paths[i]); });
  return ds;
}

std::vector<TrainSample> make_train_samples(const Dataset& ds, const SharedBasis& basis, Split split) {
  if (basis.resolution() != ds.resolution) throw Error("basis resolution does not match the dataset");
  std::vector<Eigen::VectorXd> targets(ds.objects.size());
  for (std::size_t o = 0; o < ds.objects.size(); ++o)
    if (ds.objects[o].split == split) targets[o] = project(ds.objects[o].grid, basis);
  std::vector<TrainSample> out;
  for (std::size_t i : ds.renders_in(split)) {
    const auto& r = ds.renders[i];
    TrainSample s;
    s.input = normalize_depth(r.depth);
    s.label = ds.objects[r.object].label;
    s.pose = r.pose.axis_angle();
    s.target_projection = targets[r.object];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hbeo
