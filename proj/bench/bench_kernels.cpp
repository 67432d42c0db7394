// Times each parallel kernel against its serial reference and checks that both
// produce the same result. Output is one CSV row per kernel on standard output.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "CLI11.hpp"
#include "hbeo/edt.hpp"
#include "hbeo/kernels.hpp"
#include "hbeo/shapes.hpp"
#include "hbeo/voxel.hpp"

using namespace hbeo;

namespace {

double best_seconds(int reps, const std::function<void()>& fn) {
  fn();
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* kernel, const char* size, double serial, double parallel, bool same) {
  std::printf("%s,%s,%d,%.6f,%.6f,%.2f,%s\n", kernel, size, omp_get_max_threads(), serial, parallel, serial / parallel,
              same ? "yes" : "no");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs OpenMP kernel timings"};
  int reps = 5;
  int resolution = 32;
  app.add_option("--repetitions", reps, "timed runs per kernel (best is reported)")->check(CLI::PositiveNumber);
  app.add_option("--resolution", resolution, "voxel grid edge for voxelize and EDT")->check(CLI::Range(4, 128));
  CLI11_PARSE(app, argc, argv);

  std::printf("kernel,size,threads,serial_s,parallel_s,speedup,identical\n");
  std::mt19937_64 rng(17);

  {
    kernels::ConvShape s;
    s.in_channels = 8;
    s.in_height = 24;
    s.in_width = 32;
    s.out_channels = 16;
    std::normal_distribution<double> n01;
    std::vector<double> in(static_cast<std::size_t>(s.in_channels) * s.in_height * s.in_width);
    std::vector<double> w(static_cast<std::size_t>(s.out_channels) * s.patch_size());
    std::vector<double> b(s.out_channels);
    for (auto* v : {&in, &w, &b})
      for (double& x : *v) x = n01(rng);
    std::vector<double> out_ref(static_cast<std::size_t>(s.out_channels) * s.out_pixels()), out(out_ref.size()), cols;
    const double ts = best_seconds(reps, [&] { kernels::conv2d_forward_reference(s, in, w, b, out_ref); });
    const double tp = best_seconds(reps, [&] { kernels::conv2d_forward(s, in, w, b, out, cols); });
    double err = 0;
    for (std::size_t i = 0; i < out.size(); ++i) err = std::max(err, std::abs(out[i] - out_ref[i]));
    row("conv2d_forward", "8x24x32->16", ts, tp, err < 1e-9);
  }

  {
    const TriangleMesh mesh = make_procedural_shape(ShapeFamily::kTruncatedEllipsoid, 4);
    VoxelGrid ref, par;
    const double ts = best_seconds(reps, [&] { ref = voxelize_reference(mesh, resolution); });
    const double tp = best_seconds(reps, [&] { par = voxelize(mesh, resolution); });
    const std::string size = std::to_string(resolution) + "^3";
    row("voxelize", size.c_str(), ts, tp, ref == par);

    DistanceField ds, dp;
    const double es = best_seconds(reps, [&] { ds = edt_serial(ref); });
    const double ep = best_seconds(reps, [&] { dp = edt(ref); });
    row("edt", size.c_str(), es, ep, ds.distances == dp.distances);
  }
  return 0;
}
