#pragma once

#include <cstdint>
#include <vector>

#include "hbeo/depth.hpp"
#include "hbeo/rotation.hpp"
#include "hbeo/voxel.hpp"

namespace hbeo {

/// Known voxels of a partially observed object: the rows selected by V and the
/// values w. Indices strictly increasing; anything absent is unobserved.
struct PartialObservation {
  int resolution = 0;
  std::vector<std::uint32_t> known_indices;
  std::vector<float> known_values;

  std::size_t known_count() const { return known_indices.size(); }
  std::size_t grid_size() const { return std::size_t(resolution) * resolution * resolution; }

  /// Every voxel of a grid is known.
  static PartialObservation full(const VoxelGrid& grid);

  /// Throws when indices are unsorted, out of range, or values mismatched.
  void validate() const;
};

/// Ray-carves an observation: voxel centers (object frame, posed by `pose`)
/// are projected into the image; those in front of the observed surface are
/// known-empty, those within half a voxel diagonal of it known-filled, the
/// rest unobserved.
PartialObservation carve_partial_observation(const DepthImage& depth, const Rotation& pose, const Camera& camera,
                                             int resolution);

}  // namespace hbeo
