#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hbeo/depth.hpp"
#include "hbeo/mesh.hpp"
#include "hbeo/net.hpp"
#include "hbeo/rotation.hpp"
#include "hbeo/subspace.hpp"
#include "hbeo/voxel.hpp"

namespace hbeo {

enum class Split { kTrain, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct DatasetConfig {
  int resolution = 16;
  Camera camera;
  int train_per_class = 60;
  int test_per_class = 20;
  int views_per_object = 25;
  int test_views_per_object = 25;
  double max_angle_deg = 150.0;  // poses: uniform axis, angle uniform in [0, max]
  std::string modelnet_dir;      // empty selects the procedural families
  std::uint64_t seed = 0;
  void validate() const;
};

struct LabeledMesh {
  std::string name;  // unique, filesystem-safe
  int label = 0;
  Split split = Split::kTrain;
  TriangleMesh mesh;
};

struct ObjectRecord {
  std::string name;
  int label = 0;
  Split split = Split::kTrain;
  TriangleMesh mesh;
  VoxelGrid grid;  // canonical voxelization (ground truth)
};

struct RenderRecord {
  std::string render_id;
  std::size_t object = 0;  // index into Dataset::objects
  Rotation pose;
  Camera camera;
  DepthImage depth;
};

struct Dataset {
  std::vector<std::string> class_names;
  int resolution = 0;
  std::uint64_t seed = 0;
  std::vector<ObjectRecord> objects;
  std::vector<RenderRecord> renders;

  std::vector<std::size_t> renders_in(Split s) const;
  std::vector<std::size_t> objects_in(Split s, int label) const;
};

/// Meshes for the configured source: seeded procedural families, or a
/// ModelNet-style tree `<dir>/<class>/{train,test}/*.off` (sorted, capped).
std::vector<LabeledMesh> dataset_sources(const DatasetConfig& cfg, std::vector<std::string>* class_names);

/// Pure function of (sources, cfg): voxelizes each mesh canonically and renders
/// the sampled views. Rendering runs in parallel; output order is fixed.
Dataset generate_dataset(const std::vector<LabeledMesh>& sources, const std::vector<std::string>& class_names,
                         const DatasetConfig& cfg);

/// Uniformly distributed axis, angle uniform in [0, max_angle].
Rotation sample_pose(std::uint64_t seed, double max_angle_rad);

// On-disk layout: dataset.json (metadata), manifest.jsonl (one render per line),
// meshes/<name>.off, depth/<render_id>.pgm with sidecar.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);
std::string manifest_line(const Dataset& ds, const RenderRecord& r);

/// Network inputs and projection targets for every render of a split.
std::vector<TrainSample> make_train_samples(const Dataset& ds, const SharedBasis& basis, Split split);

}  // namespace hbeo
