#include "hbeo/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hbeo/error.hpp"
#include "hbeo/geometry_detail.hpp"
#include "hbeo/io.hpp"

namespace hbeo {

VoxelGrid::VoxelGrid(int resolution, bool binary)
    : resolution_(resolution),
      binary_(binary),
      values_(static_cast<std::size_t>(resolution) * resolution * resolution, 0.0f) {
  if (resolution < 1) throw Error("voxel resolution must be positive");
}

VoxelGrid::VoxelGrid(int resolution, std::vector<float> values, bool binary)
    : resolution_(resolution), binary_(binary), values_(std::move(values)) {
  if (resolution < 1) throw Error("voxel resolution must be positive");
  if (values_.size() != static_cast<std::size_t>(resolution) * resolution * resolution)
    throw Error("voxel value count does not match resolution^3");
  if (binary_ && std::any_of(values_.begin(), values_.end(), [](float v) { return v != 0.0f && v != 1.0f; }))
    throw Error("binary voxel grid holds a value outside {0,1}");
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), [](float v) { return v > 0.5f; }));
}

VoxelGrid VoxelGrid::binarized(float level) const {
  std::vector<float> out(values_.size());
  std::transform(values_.begin(), values_.end(), out.begin(), [level](float v) { return v > level ? 1.0f : 0.0f; });
  return VoxelGrid(resolution_, std::move(out), true);
}

namespace {

using detail::ProjectedTriangle;

struct PreparedTriangle {
  Eigen::Vector3d a, b, c;
  Eigen::Vector3d lo, hi;
  ProjectedTriangle yz;
};

std::vector<PreparedTriangle> prepare(const TriangleMesh& mesh) {
  std::vector<PreparedTriangle> tris;
  tris.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    PreparedTriangle t;
    t.a = mesh.vertices[f[0]];
    t.b = mesh.vertices[f[1]];
    t.c = mesh.vertices[f[2]];
    t.lo = t.a.cwiseMin(t.b).cwiseMin(t.c);
    t.hi = t.a.cwiseMax(t.b).cwiseMax(t.c);
    t.yz = ProjectedTriangle(t.a, t.b, t.c);
    tris.push_back(t);
  }
  return tris;
}

// Index range [first, last] of voxel centers inside [lo, hi] along one axis.
std::pair<int, int> center_range(double lo, double hi, int r) {
  const int first = std::max(0, static_cast<int>(std::ceil((lo + 0.5) * r - 0.5)));
  const int last = std::min(r - 1, static_cast<int>(std::floor((hi + 0.5) * r - 0.5)));
  return {first, last};
}

void require_input(const TriangleMesh& mesh, int resolution) {
  if (mesh.empty()) throw Error("cannot voxelize an empty mesh");
  if (resolution < 2) throw Error("voxel resolution must be at least 2");
  validate(mesh);
}

bool wants_surface(const TriangleMesh& mesh, const VoxelizeOptions& opts) {
  switch (opts.surface) {
    case SurfaceFill::kAlways: return true;
    case SurfaceFill::kNever: return false;
    case SurfaceFill::kAuto: break;
  }
  return !is_watertight(mesh);
}

void fill_surface(const std::vector<PreparedTriangle>& tris, VoxelGrid& grid) {
  const int r = grid.resolution();
  const double tol = 0.5 * std::sqrt(3.0) / r;
  // Bucket triangles by the z-slices their tolerance-padded box touches.
  std::vector<std::vector<int>> by_slice(r);
  for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
    const auto [z0, z1] = center_range(tris[t].lo.z() - tol, tris[t].hi.z() + tol, r);
    for (int z = z0; z <= z1; ++z) by_slice[z].push_back(t);
  }
#pragma omp parallel for schedule(dynamic)
  for (int z = 0; z < r; ++z) {
    const double pz = VoxelGrid::center_coord(z, r);
    for (int t : by_slice[z]) {
      const auto& tri = tris[t];
      const auto [y0, y1] = center_range(tri.lo.y() - tol, tri.hi.y() + tol, r);
      const auto [x0, x1] = center_range(tri.lo.x() - tol, tri.hi.x() + tol, r);
      for (int y = y0; y <= y1; ++y) {
        const double py = VoxelGrid::center_coord(y, r);
        for (int x = x0; x <= x1; ++x) {
          if (grid.at(x, y, z) > 0.5f) continue;
          const Eigen::Vector3d p(VoxelGrid::center_coord(x, r), py, pz);
          if (detail::point_triangle_distance_sq(p, tri.a, tri.b, tri.c) <= tol * tol) grid.set(x, y, z, 1.0f);
        }
      }
    }
  }
}

}  // namespace

VoxelGrid voxelize(const TriangleMesh& mesh, int resolution, VoxelizeOptions opts) {
  require_input(mesh, resolution);
  const int r = resolution;
  const auto tris = prepare(mesh);

  std::vector<std::vector<int>> by_row(r);
  for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
    if (!tris[t].yz.valid()) continue;
    const auto [z0, z1] = center_range(tris[t].lo.z(), tris[t].hi.z(), r);
    for (int z = z0; z <= z1; ++z) by_row[z].push_back(t);
  }

  VoxelGrid grid(r, true);
#pragma omp parallel for schedule(dynamic)
  for (int z = 0; z < r; ++z) {
    const double pz = VoxelGrid::center_coord(z, r);
    std::vector<double> hits;
    for (int y = 0; y < r; ++y) {
      const double py = VoxelGrid::center_coord(y, r);
      hits.clear();
      for (int t : by_row[z]) {
        const auto& tri = tris[t];
        if (py < tri.lo.y() || py > tri.hi.y()) continue;
        if (tri.yz.covers(py, pz)) hits.push_back(detail::ray_x_crossing(tri.a, tri.b, tri.c, py, pz));
      }
      if (hits.empty()) continue;
      std::sort(hits.begin(), hits.end());
      // Walk voxels left to right; parity of remaining crossings decides inside.
      std::size_t passed = 0;
      for (int x = 0; x < r; ++x) {
        const double px = VoxelGrid::center_coord(x, r);
        while (passed < hits.size() && hits[passed] <= px) ++passed;
        if ((hits.size() - passed) % 2 == 1) grid.set(x, y, z, 1.0f);
      }
    }
  }

  if (wants_surface(mesh, opts)) fill_surface(tris, grid);
  if (grid.occupied_count() == 0) throw Error("voxelization produced no occupied voxels");
  return grid;
}

VoxelGrid voxelize_reference(const TriangleMesh& mesh, int resolution, VoxelizeOptions opts) {
  require_input(mesh, resolution);
  const int r = resolution;
  const auto tris = prepare(mesh);
  const bool surface = wants_surface(mesh, opts);
  const double tol = 0.5 * std::sqrt(3.0) / r;
  VoxelGrid grid(r, true);
  for (int z = 0; z < r; ++z)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        const Eigen::Vector3d p(VoxelGrid::center_coord(x, r), VoxelGrid::center_coord(y, r),
                                VoxelGrid::center_coord(z, r));
        int crossings = 0;
        bool near = false;
        for (const auto& tri : tris) {
          if (tri.yz.valid() && tri.yz.covers(p.y(), p.z()) &&
              detail::ray_x_crossing(tri.a, tri.b, tri.c, p.y(), p.z()) > p.x())
            ++crossings;
          if (surface && !near) near = detail::point_triangle_distance_sq(p, tri.a, tri.b, tri.c) <= tol * tol;
        }
        if (crossings % 2 == 1 || near) grid.set(x, y, z, 1.0f);
      }
  if (grid.occupied_count() == 0) throw Error("voxelization produced no occupied voxels");
  return grid;
}

VoxelGrid rotate_grid(const VoxelGrid& grid, const Rotation& rot) {
  const int r = grid.resolution();
  const double c = 0.5 * (r - 1);
  const Eigen::Matrix3d inv = rot.matrix().transpose();
  VoxelGrid out(r, grid.binary());
  for (int z = 0; z < r; ++z)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        const Eigen::Vector3d src = inv * Eigen::Vector3d(x - c, y - c, z - c) + Eigen::Vector3d::Constant(c);
        const int sx = static_cast<int>(std::floor(src.x() + 0.5));
        const int sy = static_cast<int>(std::floor(src.y() + 0.5));
        const int sz = static_cast<int>(std::floor(src.z() + 0.5));
        if (sx < 0 || sy < 0 || sz < 0 || sx >= r || sy >= r || sz >= r) continue;
        out.set(x, y, z, grid.at(sx, sy, sz));
      }
  return out;
}

double intersection_over_union(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.resolution() != b.resolution()) throw Error("IoU of grids with different resolutions");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a.values()[i] > 0.5f, pb = b.values()[i] > 0.5f;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
constexpr std::uint8_t kGridVersion = 1;
}

std::vector<std::uint8_t> encode_grid(const VoxelGrid& grid) {
  io::Writer w;
  w.raw("HBVX");
  w.u8(kGridVersion);
  w.u32(static_cast<std::uint32_t>(grid.resolution()));
  w.u8(grid.binary() ? 1 : 0);
  for (float v : grid.values()) {
    if (grid.binary())
      w.u8(v > 0.5f ? 1 : 0);
    else
      w.f32(v);
  }
  return std::move(w.buffer());
}

VoxelGrid decode_grid(std::span<const std::uint8_t> bytes) {
  io::Reader rd(bytes);
  if (rd.raw(4) != "HBVX") throw FormatError("not a voxel grid file (bad magic)");
  if (const auto v = rd.u8(); v != kGridVersion) throw FormatError("unsupported voxel grid version " + std::to_string(v));
  const auto r = rd.u32();
  if (r == 0 || r > 1024) throw FormatError("implausible voxel resolution");
  const bool binary = rd.u8() != 0;
  const std::size_t n = static_cast<std::size_t>(r) * r * r;
  std::vector<float> values(n);
  for (auto& v : values) {
    if (binary) {
      const auto b = rd.u8();
      if (b > 1) throw FormatError("binary voxel byte outside {0,1}");
      v = static_cast<float>(b);
    } else {
      v = rd.f32();
    }
  }
  if (rd.remaining() != 0) throw FormatError("trailing bytes after voxel payload");
  return VoxelGrid(static_cast<int>(r), std::move(values), binary);
}

void save_grid(const std::string& path, const VoxelGrid& grid) { io::write_atomic(path, encode_grid(grid)); }

VoxelGrid load_grid(const std::string& path) { return decode_grid(io::read_file(path)); }

std::string grid_to_ply(const VoxelGrid& grid) {
  const int r = grid.resolution();
  auto occ = [&](int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < r && y < r && z < r && grid.at(x, y, z) > 0.5f;
  };
  // Each face: neighbor offset and the four corner offsets, CCW seen from outside.
  struct Face {
    int dx, dy, dz;
    int corners[4][3];
  };
  static const Face faces[6] = {
      {-1, 0, 0, {{0, 0, 0}, {0, 0, 1}, {0, 1, 1}, {0, 1, 0}}},
      {1, 0, 0, {{1, 0, 0}, {1, 1, 0}, {1, 1, 1}, {1, 0, 1}}},
      {0, -1, 0, {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1}}},
      {0, 1, 0, {{0, 1, 0}, {0, 1, 1}, {1, 1, 1}, {1, 1, 0}}},
      {0, 0, -1, {{0, 0, 0}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}}},
      {0, 0, 1, {{0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}},
  };
  std::ostringstream verts, quads;
  std::size_t nv = 0, nq = 0;
  for (int z = 0; z < r; ++z)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        if (!occ(x, y, z)) continue;
        for (const auto& f : faces) {
          if (occ(x + f.dx, y + f.dy, z + f.dz)) continue;
          for (const auto& c : f.corners)
            verts << static_cast<double>(x + c[0]) / r - 0.5 << ' ' << static_cast<double>(y + c[1]) / r - 0.5 << ' '
                  << static_cast<double>(z + c[2]) / r - 0.5 << '\n';
          quads << "4 " << nv << ' ' << nv + 1 << ' ' << nv + 2 << ' ' << nv + 3 << '\n';
          nv += 4;
          ++nq;
        }
      }
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << nv << "\nproperty float x\nproperty float y\nproperty float z\n"
      << "element face " << nq << "\nproperty list uchar int vertex_indices\nend_header\n"
      << verts.str() << quads.str();
  return out.str();
}

}  // namespace hbeo
