#include "wurstkit/diffusion.hpp"

#include "wurstkit/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace wurstkit {

namespace {

void require_unit_interval(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream os;
        os << "timestep must lie in [0,1], got " << t;
        throw DomainError(os.str());
    }
}

std::string shape_str(const torch::Tensor& x) {
    std::ostringstream os;
    os << x.sizes();
    return os.str();
}

// Reshape a [B] coefficient so it broadcasts against x.
torch::Tensor per_sample(const torch::Tensor& coef, const torch::Tensor& x) {
    std::vector<int64_t> shape(static_cast<size_t>(x.dim()), 1);
    shape[0] = coef.size(0);
    return coef.to(x.options()).reshape(shape);
}

}  // namespace

double ShapeSpec::factor() const {
    return static_cast<double>(height) / static_cast<double>(latent_height);
}

void ShapeSpec::validate() const {
    if (height < 1 || width < 1 || channels < 1 || latent_height < 1 || latent_width < 1 || latent_channels < 1)
        throw ShapeError("ShapeSpec: all dimensions must be >= 1");
    if (height % latent_height != 0 || width % latent_width != 0 ||
        height / latent_height != width / latent_width)
        throw ShapeError("ShapeSpec: H/h and W/w must be the same integer factor");
}

double NoiseSchedule::alpha_bar(double t) const {
    require_unit_interval(t);
    const double half_pi = std::numbers::pi / 2.0;
    const double c0 = std::cos(offset / (1.0 + offset) * half_pi);
    const double ct = std::cos((t + offset) / (1.0 + offset) * half_pi);
    const double c = (ct * ct) / (c0 * c0);
    return floor + (1.0 - floor) * c;
}

double NoiseSchedule::p2_weight(double t) const {
    const double ab = alpha_bar(t);
    return (1.0 - ab) / (1.0 + ab);
}

torch::Tensor NoiseSchedule::alpha_bar(const torch::Tensor& t) const {
    if (t.numel() > 0 && (t.min().item<double>() < 0.0 || t.max().item<double>() > 1.0))
        throw DomainError("timestep tensor must lie in [0,1]");
    const double half_pi = std::numbers::pi / 2.0;
    const double c0 = std::cos(offset / (1.0 + offset) * half_pi);
    auto ct = torch::cos((t + offset) / (1.0 + offset) * half_pi);
    return floor + (1.0 - floor) * ct.square() / (c0 * c0);
}

torch::Tensor NoiseSchedule::p2_weight(const torch::Tensor& t) const {
    auto ab = alpha_bar(t);
    return (1.0 - ab) / (1.0 + ab);
}

SamplingGrid::SamplingGrid(const NoiseSchedule& schedule, int64_t steps) {
    if (steps < 1) throw DomainError("sampling grid needs at least one step");
    t_.resize(static_cast<size_t>(steps) + 1);
    alpha_bar_.resize(t_.size());
    for (int64_t i = 0; i <= steps; ++i) {
        // i == steps is pinned to exactly 1.0.
        const double t = i == steps ? 1.0 : static_cast<double>(i) / static_cast<double>(steps);
        t_[static_cast<size_t>(i)] = t;
        alpha_bar_[static_cast<size_t>(i)] = schedule.alpha_bar(t);
    }
}

double SamplingGrid::alpha(int64_t i) const {
    if (i < 1 || i > steps()) throw DomainError("grid step index must lie in [1, steps]");
    return alpha_bar(i) / alpha_bar(i - 1);
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.sizes().equals(b.sizes()))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

torch::Tensor forward_noise(const torch::Tensor& x0, double alpha_bar, const torch::Tensor& eps) {
    require_same_shape(x0, eps, "forward_noise");
    return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& alpha_bar, const torch::Tensor& eps) {
    require_same_shape(x0, eps, "forward_noise");
    if (alpha_bar.dim() != 1 || alpha_bar.size(0) != x0.size(0))
        throw ShapeError("forward_noise: alpha_bar must be a [B] vector");
    auto ab = per_sample(alpha_bar, x0);
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor forward_noise(const NoiseSchedule& schedule, const torch::Tensor& x0, double t,
                            const torch::Tensor& eps) {
    return forward_noise(x0, schedule.alpha_bar(t), eps);
}

torch::Tensor ab_to_epsilon(const torch::Tensor& x_t, const ABPrediction& pred) {
    require_same_shape(x_t, pred.a, "ab_to_epsilon(A)");
    require_same_shape(x_t, pred.b, "ab_to_epsilon(B)");
    return (x_t - pred.a) / ((1.0 - pred.b).abs() + 1e-5);
}

torch::Tensor weighted_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat, double p2) {
    require_same_shape(eps, eps_hat, "weighted_loss");
    return p2 * (eps - eps_hat).square().mean();
}

torch::Tensor weighted_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat, const torch::Tensor& p2) {
    require_same_shape(eps, eps_hat, "weighted_loss");
    if (p2.dim() != 1 || p2.size(0) != eps.size(0))
        throw ShapeError("weighted_loss: p2 must be a [B] vector");
    auto per_sample_mse = (eps - eps_hat).square().flatten(1).mean(1);
    return (p2.to(eps.options()) * per_sample_mse).mean();
}

torch::Tensor weighted_loss(const NoiseSchedule& schedule, const torch::Tensor& eps, const torch::Tensor& eps_hat,
                            double t) {
    return weighted_loss(eps, eps_hat, schedule.p2_weight(t));
}

torch::Tensor ddpm_step(const torch::Tensor& x_t, const torch::Tensor& eps_hat, double alpha_bar_t,
                        double alpha_bar_prev, const torch::Tensor& noise, bool final) {
    require_same_shape(x_t, eps_hat, "ddpm_step");
    const double a = alpha_bar_t / alpha_bar_prev;
    if (!(a > 0.0 && a <= 1.0)) throw DomainError("ddpm_step: per-step alpha must lie in (0,1]");
    if (a == 1.0) return x_t.clone();
    auto mean = (x_t - ((1.0 - a) / std::sqrt(1.0 - alpha_bar_t)) * eps_hat) / std::sqrt(a);
    if (final) return mean;
    require_same_shape(x_t, noise, "ddpm_step(noise)");
    const double var = (1.0 - a) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t);
    return mean + std::sqrt(var) * noise;
}

torch::Tensor ddpm_step(const torch::Tensor& x_t, const torch::Tensor& eps_hat, int64_t i, const SamplingGrid& grid,
                        const torch::Tensor& noise) {
    if (i < 1 || i > grid.steps()) throw DomainError("ddpm_step: step index must lie in [1, steps]");
    return ddpm_step(x_t, eps_hat, grid.alpha_bar(i), grid.alpha_bar(i - 1), noise, i == 1);
}

torch::Tensor cfg_combine(const torch::Tensor& eps_uncond, const torch::Tensor& eps_cond, double w) {
    require_same_shape(eps_uncond, eps_cond, "cfg_combine");
    if (!(w >= 0.0)) throw DomainError("guidance scale must be >= 0");
    return eps_uncond + w * (eps_cond - eps_uncond);
}

}  // namespace wurstkit
