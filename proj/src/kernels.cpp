#include "hbeo/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>

namespace hbeo::kernels {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

void im2col(const ConvShape& s, std::span<const double> input, std::vector<double>& cols) {
  const int ho = s.out_height(), wo = s.out_width(), k = s.kernel;
  const int npix = ho * wo;
  cols.resize(static_cast<std::size_t>(s.patch_size()) * npix);
#pragma omp parallel for schedule(static) if (s.in_channels > 1)
  for (int c = 0; c < s.in_channels; ++c) {
    const double* in = input.data() + static_cast<std::size_t>(c) * s.in_height * s.in_width;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * npix;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= s.in_height) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            dst[ox] = (ix >= 0 && ix < s.in_width) ? in[iy * s.in_width + ix] : 0.0;
          }
        }
      }
  }
}

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> output, std::vector<double>& cols) {
  im2col(s, input, cols);
  const int npix = s.out_pixels();
  ConstMap w(weights.data(), s.out_channels, s.patch_size());
  ConstMap x(cols.data(), s.patch_size(), npix);
  Map y(output.data(), s.out_channels, npix);
  y.noalias() = w * x;
  for (int o = 0; o < s.out_channels; ++o) y.row(o).array() += bias[static_cast<std::size_t>(o)];
}

void conv2d_backward(const ConvShape& s, std::span<const double> weights, std::span<const double> cols,
                     std::span<const double> doutput, std::span<double> dweights, std::span<double> dbias,
                     std::span<double> dinput, std::vector<double>& dcols) {
  const int npix = s.out_pixels(), patch = s.patch_size();
  ConstMap dy(doutput.data(), s.out_channels, npix);
  ConstMap x(cols.data(), patch, npix);
  Map dw(dweights.data(), s.out_channels, patch);
  dw.noalias() += dy * x.transpose();
  for (int o = 0; o < s.out_channels; ++o) dbias[static_cast<std::size_t>(o)] += dy.row(o).sum();
  if (dinput.empty()) return;

  dcols.resize(static_cast<std::size_t>(patch) * npix);
  ConstMap w(weights.data(), s.out_channels, patch);
  Map dx(dcols.data(), patch, npix);
  dx.noalias() = w.transpose() * dy;

  // col2im: scatter-add patches back onto the input plane.
  const int ho = s.out_height(), wo = s.out_width(), k = s.kernel;
  std::fill(dinput.begin(), dinput.end(), 0.0);
#pragma omp parallel for schedule(static) if (s.in_channels > 1)
  for (int c = 0; c < s.in_channels; ++c) {
    double* din = dinput.data() + static_cast<std::size_t>(c) * s.in_height * s.in_width;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = dcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * npix;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.in_height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < s.in_width) din[iy * s.in_width + ix] += row[oy * wo + ox];
          }
        }
      }
  }
}

void conv2d_forward_reference(const ConvShape& s, std::span<const double> input, std::span<const double> weights,
                              std::span<const double> bias, std::span<double> output) {
  const int ho = s.out_height(), wo = s.out_width(), k = s.kernel;
  for (int o = 0; o < s.out_channels; ++o)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < s.in_channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride - s.pad + ky, ix = ox * s.stride - s.pad + kx;
              if (iy < 0 || ix < 0 || iy >= s.in_height || ix >= s.in_width) continue;
              acc += weights[static_cast<std::size_t>(((o * s.in_channels + c) * k + ky) * k + kx)] *
                     input[static_cast<std::size_t>((c * s.in_height + iy) * s.in_width + ix)];
            }
        output[static_cast<std::size_t>((o * ho + oy) * wo + ox)] = acc;
      }
}

void conv2d_backward_reference(const ConvShape& s, std::span<const double> input, std::span<const double> weights,
                               std::span<const double> doutput, std::span<double> dweights, std::span<double> dbias,
                               std::span<double> dinput) {
  const int ho = s.out_height(), wo = s.out_width(), k = s.kernel;
  if (!dinput.empty()) std::fill(dinput.begin(), dinput.end(), 0.0);
  for (int o = 0; o < s.out_channels; ++o)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const double g = doutput[static_cast<std::size_t>((o * ho + oy) * wo + ox)];
        dbias[static_cast<std::size_t>(o)] += g;
        for (int c = 0; c < s.in_channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride - s.pad + ky, ix = ox * s.stride - s.pad + kx;
              if (iy < 0 || ix < 0 || iy >= s.in_height || ix >= s.in_width) continue;
              const auto wi = static_cast<std::size_t>(((o * s.in_channels + c) * k + ky) * k + kx);
              const auto xi = static_cast<std::size_t>((c * s.in_height + iy) * s.in_width + ix);
              dweights[wi] += g * input[xi];
              if (!dinput.empty()) dinput[xi] += g * weights[wi];
            }
      }
}

}  // namespace hbeo::kernels
