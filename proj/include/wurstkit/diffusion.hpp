#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace wurstkit {

// Spatial geometry of one compression level. f = H/h.
struct ShapeSpec {
    int64_t height = 64;
    int64_t width = 64;
    int64_t channels = 3;
    int64_t latent_height = 16;
    int64_t latent_width = 16;
    int64_t latent_channels = 4;

    double factor() const;
    // Throws ShapeError unless H = f*h and W = f*w with an integral f >= 1.
    void validate() const;
};

// Continuous-time cosine schedule.
//
//   c(t)     = cos^2(((t+s)/(1+s)) * pi/2) / cos^2((s/(1+s)) * pi/2)
//   abar(t)  = floor + (1 - floor) * c(t)
//
// With floor = 0 this is the plain improved-DDPM cosine. The default floor keeps
// abar(1) at 1e-4 so the first reverse step out of pure noise stays finite while
// abar remains strictly decreasing with abar(0) = 1.
struct NoiseSchedule {
    double offset = 0.008;
    double floor = 1e-4;
    // Lower bound of training timesteps.
    double min_train_t = 1e-4;

    double alpha_bar(double t) const;
    // p2 loss weight (1 - abar) / (1 + abar).
    double p2_weight(double t) const;

    // Per-element variants; t has shape [B].
    torch::Tensor alpha_bar(const torch::Tensor& t) const;
    torch::Tensor p2_weight(const torch::Tensor& t) const;
};

// Sampling grid t_0 = 0 < t_1 < ... < t_N = 1, uniform in t.
class SamplingGrid {
public:
    SamplingGrid(const NoiseSchedule& schedule, int64_t steps);

    int64_t steps() const { return static_cast<int64_t>(t_.size()) - 1; }
    double t(int64_t i) const { return t_.at(static_cast<size_t>(i)); }
    double alpha_bar(int64_t i) const { return alpha_bar_.at(static_cast<size_t>(i)); }
    // alpha_i = abar(t_i) / abar(t_{i-1}); i >= 1.
    double alpha(int64_t i) const;

private:
    std::vector<double> t_;
    std::vector<double> alpha_bar_;
};

struct ABPrediction {
    torch::Tensor a;
    torch::Tensor b;
};

// sqrt(abar) * x0 + sqrt(1 - abar) * eps, abar broadcast over the batch dimension
// when given as a [B] tensor.
torch::Tensor forward_noise(const torch::Tensor& x0, double alpha_bar, const torch::Tensor& eps);
torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& alpha_bar, const torch::Tensor& eps);
torch::Tensor forward_noise(const NoiseSchedule& schedule, const torch::Tensor& x0, double t, const torch::Tensor& eps);

// eps_hat = (x_t - A) / (|1 - B| + 1e-5)
torch::Tensor ab_to_epsilon(const torch::Tensor& x_t, const ABPrediction& pred);

// p2 * mean((eps - eps_hat)^2); with a [B] weight vector the per-sample MSE is
// weighted and then averaged over the batch.
torch::Tensor weighted_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat, double p2);
torch::Tensor weighted_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat, const torch::Tensor& p2);
torch::Tensor weighted_loss(const NoiseSchedule& schedule, const torch::Tensor& eps, const torch::Tensor& eps_hat,
                            double t);

// One DDPM reverse step from abar_t to abar_prev:
//   x_prev = (x_t - (1-a)/sqrt(1-abar_t) * eps_hat) / sqrt(a) + sqrt((1-a)(1-abar_prev)/(1-abar_t)) * noise
// with a = abar_t / abar_prev. The noise term is dropped when final is set.
torch::Tensor ddpm_step(const torch::Tensor& x_t, const torch::Tensor& eps_hat, double alpha_bar_t,
                        double alpha_bar_prev, const torch::Tensor& noise, bool final);
// Grid-indexed step from t_i to t_{i-1}; i = 0 throws. The step onto t_0 is noise free.
torch::Tensor ddpm_step(const torch::Tensor& x_t, const torch::Tensor& eps_hat, int64_t i, const SamplingGrid& grid,
                        const torch::Tensor& noise);

// eps_u + w * (eps_c - eps_u)
torch::Tensor cfg_combine(const torch::Tensor& eps_uncond, const torch::Tensor& eps_cond, double w);

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what);

}  // namespace wurstkit
