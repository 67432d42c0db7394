#include "hbeo/observation.hpp"

#include <cmath>

#include "hbeo/error.hpp"

namespace hbeo {

PartialObservation PartialObservation::full(const VoxelGrid& grid) {
  PartialObservation obs;
  obs.resolution = grid.resolution();
  obs.known_indices.resize(grid.size());
  obs.known_values.assign(grid.values().begin(), grid.values().end());
  for (std::size_t i = 0; i < grid.size(); ++i) obs.known_indices[i] = static_cast<std::uint32_t>(i);
  return obs;
}

void PartialObservation::validate() const {
  if (resolution < 1) throw Error("observation has no resolution");
  if (known_indices.size() != known_values.size()) throw Error("observation index/value lengths differ");
  const std::size_t d = grid_size();
  for (std::size_t i = 0; i < known_indices.size(); ++i) {
    if (known_indices[i] >= d) throw Error("observation index out of range");
    if (i > 0 && known_indices[i] <= known_indices[i - 1]) throw Error("observation indices not strictly increasing");
  }
}

PartialObservation carve_partial_observation(const DepthImage& depth, const Rotation& pose, const Camera& camera,
                                             int resolution) {
  if (resolution < 2) throw Error("voxel resolution must be at least 2");
  if (depth.width() != camera.width || depth.height() != camera.height)
    throw Error("depth image size does not match camera");
  if (depth.object_pixels() == 0) throw Error("depth image contains no object pixels");

  const int r = resolution;
  const Eigen::Matrix3d rot = pose.matrix();
  const double tol = 0.5 * std::sqrt(3.0) / r;
  const double cx = 0.5 * camera.width, cy = 0.5 * camera.height;

  PartialObservation obs;
  obs.resolution = r;
  // z-major iteration yields sorted flat indices directly.
  for (int z = 0; z < r; ++z)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        Eigen::Vector3d p = rot * Eigen::Vector3d(VoxelGrid::center_coord(x, r), VoxelGrid::center_coord(y, r),
                                                  VoxelGrid::center_coord(z, r));
        p.z() += camera.distance;
        if (p.z() <= 0) continue;
        const double u = cx + camera.focal * p.x() / p.z();
        const double v = cy - camera.focal * p.y() / p.z();
        const int px = static_cast<int>(std::floor(u)), py = static_cast<int>(std::floor(v));
        if (px < 0 || py < 0 || px >= camera.width || py >= camera.height) continue;
        const double s = depth.at(px, py);
        float label;
        if (s <= 0 || p.z() < s)
          label = 0.0f;
        else if (p.z() <= s + tol)
          label = 1.0f;
        else
          continue;
        obs.known_indices.push_back(static_cast<std::uint32_t>((std::size_t(z) * r + y) * r + x));
        obs.known_values.push_back(label);
      }
  return obs;
}

}  // namespace hbeo
