#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace hbeo {

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  bool empty() const { return faces.empty(); }

  /// Appends another mesh, offsetting its indices.
  void append(const TriangleMesh& other);
};

/// Parses ASCII OFF. Polygons are fan-triangulated and the result normalized
/// into the unit cube centered at the origin (skipped when `normalize` is
/// false, for meshes written normalized). Throws ParseError with a line number
/// on malformed input.
TriangleMesh load_off(std::string_view text, bool normalize = true);
TriangleMesh load_off_file(const std::string& path, bool normalize = true);

std::string to_off(const TriangleMesh& mesh);

/// Translate to the bounding-box center and scale so the largest extent is 1.
void normalize_to_unit_cube(TriangleMesh& mesh);

/// True when every undirected edge is used by exactly two faces.
bool is_watertight(const TriangleMesh& mesh);

/// Validates face indices; throws Error when any is out of range.
void validate(const TriangleMesh& mesh);

// Closed primitive builders used by the procedural shape families and tests.
TriangleMesh make_box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);
TriangleMesh make_uv_sphere(double radius, int stacks, int slices);

}  // namespace hbeo
