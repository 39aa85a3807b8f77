#include "wurstkit/resize.hpp"

#include "wurstkit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace wurstkit {

double cubic_kernel(double x, double a) {
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

torch::Tensor resample_matrix(int64_t in_size, int64_t out_size, ResampleKernel kernel,
                              torch::TensorOptions options) {
    if (in_size < 1 || out_size < 1) throw ShapeError("resample: sizes must be >= 1");
    auto m = torch::zeros({out_size, in_size}, torch::kDouble);
    auto acc = m.accessor<double, 2>();
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    auto clamp_idx = [in_size](int64_t i) { return std::clamp<int64_t>(i, 0, in_size - 1); };
    for (int64_t o = 0; o < out_size; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        switch (kernel) {
            case ResampleKernel::nearest: {
                const auto i = static_cast<int64_t>(std::floor((static_cast<double>(o) + 0.5) * scale));
                acc[o][clamp_idx(i)] += 1.0;
                break;
            }
            case ResampleKernel::bilinear: {
                const double f = std::floor(src);
                const double frac = src - f;
                const auto i = static_cast<int64_t>(f);
                acc[o][clamp_idx(i)] += 1.0 - frac;
                acc[o][clamp_idx(i + 1)] += frac;
                break;
            }
            case ResampleKernel::bicubic: {
                const double f = std::floor(src);
                const double frac = src - f;
                const auto i = static_cast<int64_t>(f);
                for (int64_t k = -1; k <= 2; ++k)
                    acc[o][clamp_idx(i + k)] += cubic_kernel(static_cast<double>(k) - frac);
                break;
            }
        }
    }
    return m.to(options);
}

torch::Tensor resample(const torch::Tensor& x, int64_t out_h, int64_t out_w, ResampleKernel kernel) {
    if (x.dim() < 2) throw ShapeError("resample: need at least two dimensions");
    const int64_t in_h = x.size(-2);
    const int64_t in_w = x.size(-1);
    if (in_h == out_h && in_w == out_w && kernel != ResampleKernel::nearest) return x;
    auto opts = x.options().requires_grad(false);
    auto rows = resample_matrix(in_h, out_h, kernel, opts);
    auto cols = resample_matrix(in_w, out_w, kernel, opts);
    return torch::matmul(torch::matmul(rows, x), cols.t());
}

torch::Tensor resize_bicubic(const torch::Tensor& image, int64_t out_h, int64_t out_w) {
    return resample(image, out_h, out_w, ResampleKernel::bicubic).clamp(0.0, 1.0);
}

}  // namespace wurstkit
