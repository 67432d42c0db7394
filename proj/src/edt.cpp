#include "hbeo/edt.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

#include "hbeo/error.hpp"

namespace hbeo {

namespace {

using i64 = std::int64_t;
constexpr i64 kInf = std::numeric_limits<i64>::max();

// Boundary between two parabolas as an exact rational num/den, den > 0.
struct Boundary {
  i64 num = 0;
  i64 den = 1;
  int kind = 0;  // -1: -inf, +1: +inf, 0: finite
};

// Both boundaries finite.
bool less_equal(const Boundary& a, const Boundary& b) {
  return static_cast<__int128>(a.num) * b.den <= static_cast<__int128>(b.num) * a.den;
}

// 1-D squared-distance transform of a strided line, in place via scratch buffers.
// g[q] = min over sites p of (q - p)^2 + f[p]; non-site entries hold kInf.
void transform_line(i64* data, int n, int stride, std::vector<i64>& f, std::vector<int>& v,
                    std::vector<Boundary>& z) {
  f.resize(n);
  for (int q = 0; q < n; ++q) f[q] = data[std::size_t(q) * stride];

  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = {0, 1, -1};
      z[1] = {0, 1, 1};
      continue;
    }
    Boundary s;
    while (true) {
      const int p = v[k];
      s = {(f[q] + i64(q) * q) - (f[p] + i64(p) * p), 2 * i64(q - p), 0};
      if (k > 0 && less_equal(s, z[k])) {
        --k;
        continue;
      }
      // k == 0: z[0] is -inf so the new parabola always enters after v[0].
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = {0, 1, 1};
  }
  if (k < 0) return;  // no sites on this line: leave kInf

  int j = 0;
  for (int q = 0; q < n; ++q) {
    // Advance while the next boundary lies strictly left of q.
    while (z[j + 1].kind == 0 && z[j + 1].num < i64(q) * z[j + 1].den) ++j;
    const i64 d = q - v[j];
    data[std::size_t(q) * stride] = d * d + f[v[j]];
  }
}

template <bool Parallel>
DistanceField edt_impl(const VoxelGrid& grid) {
  const int r = grid.resolution();
  if (grid.occupied_count() == 0) throw Error("distance transform of an empty grid is undefined");
  const std::size_t n = grid.size();
  std::vector<i64> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = grid.values()[i] > 0.5f ? 0 : kInf;

  const std::size_t rr = std::size_t(r) * r;
  // Pass along x (stride 1), then y (stride r), then z (stride r^2).
  for (int axis = 0; axis < 3; ++axis) {
    const int stride = axis == 0 ? 1 : axis == 1 ? r : static_cast<int>(rr);
#pragma omp parallel if (Parallel)
    {
      std::vector<i64> f;
      std::vector<int> v;
      std::vector<Boundary> z;
#pragma omp for schedule(static)
      for (int line = 0; line < static_cast<int>(rr); ++line) {
        const int a = line % r, b = line / r;
        std::size_t base;
        if (axis == 0) base = (std::size_t(b) * r + a) * r;  // (y=a, z=b)
        else if (axis == 1) base = std::size_t(b) * rr + a;  // (x=a, z=b)
        else base = std::size_t(b) * r + a;                  // (x=a, y=b)
        transform_line(sq.data() + base, r, stride, f, v, z);
      }
    }
  }

  DistanceField out;
  out.resolution = r;
  out.distances.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.distances[i] = std::sqrt(static_cast<double>(sq[i]));
  return out;
}

}  // namespace

DistanceField edt(const VoxelGrid& grid) { return edt_impl<true>(grid); }

DistanceField edt_serial(const VoxelGrid& grid) { return edt_impl<false>(grid); }

}  // namespace hbeo
