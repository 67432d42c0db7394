#include "hbeo/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <utility>

#include "hbeo/error.hpp"

namespace hbeo {

void TriangleMesh::append(const TriangleMesh& other) {
  const auto base = static_cast<std::uint32_t>(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (const auto& f : other.faces) faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

namespace {

// Splits an OFF text into meaningful lines (comments stripped, blanks skipped),
// remembering their 1-based source line numbers.
struct Line {
  int number;
  std::string text;
};

std::vector<Line> meaningful_lines(std::string_view text) {
  std::vector<Line> out;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    ++number;
    std::string line(text.substr(pos, end - pos));
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back({number, line});
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const Line& line, std::string_view what) {
  std::istringstream in(line.text);
  std::vector<T> values;
  T v;
  while (in >> v) values.push_back(v);
  if (!in.eof()) throw ParseError("malformed " + std::string(what), line.number);
  return values;
}

}  // namespace

TriangleMesh load_off(std::string_view text, bool normalize) {
  const auto lines = meaningful_lines(text);
  if (lines.empty()) throw ParseError("empty file", 1);

  // Header must be "OFF"; some archives glue the counts onto it ("OFF12 20 0").
  std::size_t cursor = 0;
  const Line& header = lines[cursor++];
  std::string head = header.text;
  head.erase(0, head.find_first_not_of(" \t"));
  if (head.rfind("OFF", 0) != 0) throw ParseError("expected OFF header", header.number);
  Line counts_line{header.number, head.substr(3)};
  if (counts_line.text.find_first_not_of(" \t") == std::string::npos) {
    if (cursor >= lines.size()) throw ParseError("missing counts line", header.number + 1);
    counts_line = lines[cursor++];
  } else if (!std::isdigit(static_cast<unsigned char>(counts_line.text[0])) && counts_line.text[0] != ' ') {
    throw ParseError("expected OFF header", header.number);
  }

  const auto counts = parse_numbers<long long>(counts_line, "counts line");
  if (counts.size() < 2 || counts[0] < 0 || counts[1] < 0)
    throw ParseError("expected vertex and face counts", counts_line.number);
  const auto nv = static_cast<std::size_t>(counts[0]);
  const auto nf = static_cast<std::size_t>(counts[1]);
  if (nv == 0) throw ParseError("zero vertices", counts_line.number);

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (cursor >= lines.size()) throw ParseError("unexpected end of file in vertex list", lines.back().number + 1);
    const Line& l = lines[cursor++];
    const auto xyz = parse_numbers<double>(l, "vertex");
    if (xyz.size() < 3) throw ParseError("vertex needs 3 coordinates", l.number);
    if (!std::isfinite(xyz[0]) || !std::isfinite(xyz[1]) || !std::isfinite(xyz[2]))
      throw ParseError("non-finite vertex", l.number);
    mesh.vertices.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    if (cursor >= lines.size()) throw ParseError("unexpected end of file in face list", lines.back().number + 1);
    const Line& l = lines[cursor++];
    // Trailing per-face colors may be floats, so read the leading ints by hand.
    std::istringstream in(l.text);
    long long n = 0;
    if (!(in >> n) || n < 3) throw ParseError("face needs at least 3 indices", l.number);
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(n));
    for (auto& v : idx) {
      long long j;
      if (!(in >> j)) throw ParseError("truncated face", l.number);
      if (j < 0 || static_cast<std::size_t>(j) >= nv) throw ParseError("vertex index out of range", l.number);
      v = static_cast<std::uint32_t>(j);
    }
    for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
  }
  if (normalize) normalize_to_unit_cube(mesh);
  return mesh;
}

TriangleMesh load_off_file(const std::string& path, bool normalize) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open mesh file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return load_off(ss.str(), normalize);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
}

std::string to_off(const TriangleMesh& mesh) {
  std::ostringstream out;
  out.precision(17);
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
  for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  return out.str();
}

void normalize_to_unit_cube(TriangleMesh& mesh) {
  if (mesh.vertices.empty()) throw Error("cannot normalize an empty mesh");
  Eigen::Vector3d lo = mesh.vertices.front(), hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0)) throw Error("degenerate mesh: zero extent");
  const Eigen::Vector3d center = 0.5 * (lo + hi);
  for (auto& v : mesh.vertices) v = (v - center) / extent;
}

bool is_watertight(const TriangleMesh& mesh) {
  if (mesh.faces.empty()) return false;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      auto a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  }
  return std::all_of(edges.begin(), edges.end(), [](const auto& kv) { return kv.second == 2; });
}

void validate(const TriangleMesh& mesh) {
  for (const auto& f : mesh.faces)
    for (auto i : f)
      if (i >= mesh.vertices.size()) throw Error("face index out of range");
}

TriangleMesh make_box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  // Outward-facing, counter-clockwise when viewed from outside.
  const std::array<std::array<std::uint32_t, 4>, 6> quads{{
      {0, 2, 3, 1},  // z-
      {4, 5, 7, 6},  // z+
      {0, 1, 5, 4},  // y-
      {2, 6, 7, 3},  // y+
      {0, 4, 6, 2},  // x-
      {1, 3, 7, 5},  // x+
  }};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  return m;
}

TriangleMesh make_uv_sphere(double radius, int stacks, int slices) {
  if (stacks < 2 || slices < 3) throw Error("sphere tessellation too coarse");
  TriangleMesh m;
  m.vertices.emplace_back(0, 0, radius);
  for (int i = 1; i < stacks; ++i) {
    const double theta = std::numbers::pi * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / slices;
      m.vertices.emplace_back(radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
                              radius * std::cos(theta));
    }
  }
  m.vertices.emplace_back(0, 0, -radius);
  const auto south = static_cast<std::uint32_t>(m.vertices.size() - 1);
  auto ring = [&](int i, int j) { return static_cast<std::uint32_t>(1 + (i - 1) * slices + (j % slices)); };
  for (int j = 0; j < slices; ++j) m.faces.push_back({0, ring(1, j), ring(1, j + 1)});
  for (int i = 1; i + 1 < stacks; ++i) {
    for (int j = 0; j < slices; ++j) {
      m.faces.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  }
  for (int j = 0; j < slices; ++j) m.faces.push_back({south, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
  return m;
}

}  // namespace hbeo
