#pragma once

#include <string>
#include <vector>

#include "hbeo/mesh.hpp"
#include "hbeo/rotation.hpp"

namespace hbeo {

/// Pinhole camera on the -z axis at `distance` from the origin, looking at it.
/// Image rows grow downward; the principal point is the image center.
struct Camera {
  int width = 64;
  int height = 48;
  double focal = 76.8;  // pixels
  double distance = 2.0;

  /// Focal length at which a unit-height object at `distance` spans `fraction` of the rows.
  static Camera with_image_size(int width, int height, double distance = 2.0, double fraction = 0.8);

  bool operator==(const Camera&) const = default;
};

/// Segmented range image; depth is camera-axis z, 0 marks background.
class DepthImage {
 public:
  DepthImage() = default;
  DepthImage(int width, int height) : width_(width), height_(height), depth_(std::size_t(width) * height, 0.0f) {}

  int width() const { return width_; }
  int height() const { return height_; }
  float at(int x, int y) const { return depth_[std::size_t(y) * width_ + x]; }
  void set(int x, int y, float v) { depth_[std::size_t(y) * width_ + x] = v; }
  const std::vector<float>& data() const { return depth_; }

  std::size_t object_pixels() const;

  bool operator==(const DepthImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> depth_;
};

/// Z-buffer rasterization of `mesh` rotated by `pose`. Throws on an empty render.
DepthImage render_depth(const TriangleMesh& mesh, const Rotation& pose, const Camera& camera);

// 16-bit binary PGM plus a "<path>.txt" sidecar holding the quantization range
// and camera. Stored value q>0 maps to min + (q-1)/65534 * (max-min).
struct DepthFileInfo {
  double depth_min = 0.0;
  double depth_max = 0.0;
  Camera camera;
};

void save_depth_pgm(const std::string& path, const DepthImage& image, const Camera& camera);
DepthImage load_depth_pgm(const std::string& path, DepthFileInfo* info = nullptr);
std::string depth_sidecar_path(const std::string& pgm_path);

/// Quantization step for a given range, used by tests that compare re-loaded images.
double depth_quantum(double depth_min, double depth_max);

/// The image exactly as save_depth_pgm followed by load_depth_pgm would return it.
DepthImage quantize_depth(const DepthImage& image);

}  // namespace hbeo
