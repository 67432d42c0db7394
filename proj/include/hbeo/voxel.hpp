#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hbeo/mesh.hpp"
#include "hbeo/rotation.hpp"

namespace hbeo {

/// Cubic occupancy volume. Flat index = z*r*r + y*r + x, always.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution, bool binary = true);
  VoxelGrid(int resolution, std::vector<float> values, bool binary);

  int resolution() const { return resolution_; }
  std::size_t size() const { return values_.size(); }
  bool binary() const { return binary_; }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * resolution_ + y) * resolution_ + x;
  }
  float at(int x, int y, int z) const { return values_[index(x, y, z)]; }
  void set(int x, int y, int z, float v) { values_[index(x, y, z)] = v; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  std::size_t occupied_count() const;

  /// Threshold at `level` (value > level becomes 1).
  VoxelGrid binarized(float level = 0.5f) const;

  /// Voxel center in the normalized object frame ([-0.5, 0.5]^3).
  static double center_coord(int i, int resolution) { return (i + 0.5) / resolution - 0.5; }

  bool operator==(const VoxelGrid& o) const = default;

 private:
  int resolution_ = 0;
  bool binary_ = true;
  std::vector<float> values_;
};

enum class SurfaceFill {
  kAuto,    // dilate surface voxels only when the mesh is not watertight
  kAlways,
  kNever,
};

struct VoxelizeOptions {
  SurfaceFill surface = SurfaceFill::kAuto;
};

/// Solid voxelization by +x ray parity at voxel centers, plus surface voxels
/// (center within half a voxel diagonal of a triangle) for open meshes.
VoxelGrid voxelize(const TriangleMesh& mesh, int resolution, VoxelizeOptions opts = {});

/// Single-threaded per-voxel reference for voxelize(); kept for tests and benchmarks.
VoxelGrid voxelize_reference(const TriangleMesh& mesh, int resolution, VoxelizeOptions opts = {});

/// Nearest-neighbor inverse-mapping resample about the grid center.
VoxelGrid rotate_grid(const VoxelGrid& grid, const Rotation& rot);

double intersection_over_union(const VoxelGrid& a, const VoxelGrid& b);

// "HBVX" container: magic, u8 version, u32 LE resolution, u8 binary flag, payload.
std::vector<std::uint8_t> encode_grid(const VoxelGrid& grid);
VoxelGrid decode_grid(std::span<const std::uint8_t> bytes);
void save_grid(const std::string& path, const VoxelGrid& grid);
VoxelGrid load_grid(const std::string& path);

/// Boundary faces between occupied and empty voxels, as binary-free ASCII PLY.
std::string grid_to_ply(const VoxelGrid& grid);

}  // namespace hbeo
