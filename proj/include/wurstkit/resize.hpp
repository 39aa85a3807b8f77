#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace wurstkit {

enum class ResampleKernel { nearest, bilinear, bicubic };

// Catmull-Rom cubic (a = -0.5).
double cubic_kernel(double x, double a = -0.5);

// Dense [out, in] interpolation matrix for one axis. Pixel centers are aligned
// (half-pixel convention) and taps beyond the border are clamped to the edge.
torch::Tensor resample_matrix(int64_t in_size, int64_t out_size, ResampleKernel kernel,
                              torch::TensorOptions options = torch::kFloat);

// Separable resampling of the last two dimensions of x (any leading dims).
// Linear in x, so gradients flow through it. No clipping.
torch::Tensor resample(const torch::Tensor& x, int64_t out_h, int64_t out_w, ResampleKernel kernel);

// Bicubic resize of an image tensor [.., 3, H, W] clipped to [0,1].
torch::Tensor resize_bicubic(const torch::Tensor& image, int64_t out_h, int64_t out_w);

}  // namespace wurstkit
