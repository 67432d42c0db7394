#pragma once

// Strided 2-D convolution kernels for the joint regressor. The im2col + GEMM
// path is the production kernel (OpenMP over channels, Eigen GEMM); the
// direct-loop *_reference functions are the serial ground truth that tests and
// the benchmark compare against.

#include <span>
#include <vector>

namespace hbeo::kernels {

struct ConvShape {
  int in_channels = 1;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 1;
  int kernel = 5;
  int stride = 2;
  int pad = 2;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return in_channels * kernel * kernel; }
  int out_pixels() const { return out_height() * out_width(); }
};

// Layouts: input [C][H][W], weights [Co][C][K][K], output [Co][Ho][Wo].

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> output, std::vector<double>& cols);

/// Accumulates into dweights/dbias; overwrites dinput unless it is empty.
/// `cols` must hold the im2col matrix of `input` from the forward pass.
void conv2d_backward(const ConvShape& s, std::span<const double> weights, std::span<const double> cols,
                     std::span<const double> doutput, std::span<double> dweights, std::span<double> dbias,
                     std::span<double> dinput, std::vector<double>& dcols);

void conv2d_forward_reference(const ConvShape& s, std::span<const double> input, std::span<const double> weights,
                              std::span<const double> bias, std::span<double> output);

void conv2d_backward_reference(const ConvShape& s, std::span<const double> input, std::span<const double> weights,
                               std::span<const double> doutput, std::span<double> dweights, std::span<double> dbias,
                               std::span<double> dinput);

void im2col(const ConvShape& s, std::span<const double> input, std::vector<double>& cols);

}  // namespace hbeo::kernels
