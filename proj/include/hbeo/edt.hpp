#pragma once

#include <vector>

#include "hbeo/voxel.hpp"

namespace hbeo {

/// Unsigned distance (voxel units) from each voxel center to the nearest
/// occupied voxel center.
struct DistanceField {
  int resolution = 0;
  std::vector<double> distances;
};

/// Exact EDT by three separable lower-envelope passes (one per axis);
/// lines within a pass run in parallel.
DistanceField edt(const VoxelGrid& grid);

/// Same algorithm, single-threaded. Reference for tests and the benchmark.
DistanceField edt_serial(const VoxelGrid& grid);

}  // namespace hbeo
