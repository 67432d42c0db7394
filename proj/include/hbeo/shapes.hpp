#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hbeo/mesh.hpp"

namespace hbeo {

// Three closed, rotationally asymmetric families with seeded parameter jitter.
enum class ShapeFamily : int {
  kLidBox = 0,              // open box (disjoint wall slabs) with a hinged, raised lid
  kTruncatedEllipsoid = 1,  // triaxial ellipsoid cut by two planes
  kLBracket = 2,            // extruded L with unequal arms
};

constexpr int kShapeFamilies = 3;

std::vector<std::string> procedural_class_names();

/// Watertight union of closed components, normalized into the unit cube.
TriangleMesh make_procedural_shape(ShapeFamily family, std::uint64_t seed);

}  // namespace hbeo
