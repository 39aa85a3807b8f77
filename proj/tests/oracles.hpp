#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written from the closed-form definitions, without calling into
// the library.

#include <torch/torch.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline double rel_err(double got, double want) {
    const double scale = std::max(std::abs(want), 1e-300);
    if (got == want) return 0.0;
    return std::abs(got - want) / scale;
}

inline double cosine_alpha_bar(double t, double s, double floor) {
    const long double pi = std::numbers::pi_v<long double>;
    auto f = [&](long double u) {
        const long double c = cosl((u + s) / (1.0L + s) * pi / 2.0L);
        return c * c;
    };
    return static_cast<double>(floor + (1.0L - floor) * f(t) / f(0.0L));
}

inline double p2_from_alpha_bar(double ab) { return (1.0 - ab) / (1.0 + ab); }

inline double ddpm_scalar(double x, double eps_hat, double ab_t, double ab_prev, double noise, bool final) {
    const long double a = static_cast<long double>(ab_t) / ab_prev;
    long double mean = (x - (1.0L - a) / sqrtl(1.0L - ab_t) * eps_hat) / sqrtl(a);
    if (final) return static_cast<double>(mean);
    return static_cast<double>(mean + sqrtl((1.0L - a) * (1.0L - ab_prev) / (1.0L - ab_t)) * noise);
}

// Keys' cubic convolution kernel.
inline double keys_cubic(double x, double a = -0.5) {
    x = std::abs(x);
    if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
    return 0.0;
}

// Direct 2-D bicubic evaluation at half-pixel aligned centres, edge-clamped.
inline std::vector<double> bicubic_resize(const std::vector<double>& img, int h, int w, int oh, int ow) {
    auto weights = [](int in, int out, int o, std::vector<int>& idx, std::vector<double>& wts) {
        const double scale = static_cast<double>(in) / out;
        const double centre = (o + 0.5) * scale - 0.5;
        idx.clear();
        wts.clear();
        const int lo = static_cast<int>(std::floor(centre)) - 2;
        const int hi = static_cast<int>(std::ceil(centre)) + 2;
        double total = 0.0;
        for (int k = lo; k <= hi; ++k) {
            const double wt = keys_cubic(k - centre);
            if (wt == 0.0) continue;
            idx.push_back(std::clamp(k, 0, in - 1));
            wts.push_back(wt);
            total += wt;
        }
        for (auto& v : wts) v /= total;
    };
    std::vector<double> out(static_cast<size_t>(oh * ow), 0.0);
    std::vector<int> iy, ix;
    std::vector<double> wy, wx;
    for (int y = 0; y < oh; ++y) {
        weights(h, oh, y, iy, wy);
        for (int x = 0; x < ow; ++x) {
            weights(w, ow, x, ix, wx);
            double acc = 0.0;
            for (size_t a = 0; a < iy.size(); ++a)
                for (size_t b = 0; b < ix.size(); ++b) acc += wy[a] * wx[b] * img[static_cast<size_t>(iy[a] * w + ix[b])];
            out[static_cast<size_t>(y * ow + x)] = acc;
        }
    }
    return out;
}

// Denman-Beavers iteration for the principal square root of a matrix with no
// eigenvalues on the closed negative real axis.
inline Eigen::MatrixXd sqrtm_denman_beavers(const Eigen::MatrixXd& a, int iters = 100) {
    Eigen::MatrixXd y = a;
    Eigen::MatrixXd z = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    for (int i = 0; i < iters; ++i) {
        Eigen::MatrixXd yi = y.inverse();
        Eigen::MatrixXd zi = z.inverse();
        Eigen::MatrixXd yn = 0.5 * (y + zi);
        z = 0.5 * (z + yi);
        const double delta = (yn - y).norm();
        y = yn;
        if (delta < 1e-15 * y.norm()) break;
    }
    return y;
}

// Frechet distance via the non-symmetric product square root.
inline double frechet(const Eigen::VectorXd& m1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& m2,
                      const Eigen::MatrixXd& s2) {
    Eigen::MatrixXd prod = s1 * s2;
    return (m1 - m2).squaredNorm() + (s1 + s2 - 2.0 * sqrtm_denman_beavers(prod)).trace();
}

inline double inception_score_direct(const std::vector<std::vector<double>>& p) {
    const size_t k = p.front().size();
    std::vector<double> marginal(k, 0.0);
    for (const auto& row : p)
        for (size_t j = 0; j < k; ++j) marginal[j] += row[j] / static_cast<double>(p.size());
    double kl_sum = 0.0;
    for (const auto& row : p)
        for (size_t j = 0; j < k; ++j)
            if (row[j] > 0.0) kl_sum += row[j] * std::log(row[j] / marginal[j]);
    return std::exp(kl_sum / static_cast<double>(p.size()));
}

// Relative error of analytic vs central finite-difference gradients on
// `samples` random coordinates of `param`. f must be a scalar function.
// Returns the worst relative error over coordinates whose gradient is
// non-negligible.
// `floor` bounds the denominator from below; pass a fraction of the
// network-wide gradient scale so parameters whose exact gradient is zero
// (e.g. a key bias under softmax shift invariance) compare on absolute error.
inline double gradient_check(torch::Tensor param, const std::function<torch::Tensor()>& f, int samples,
                             uint64_t seed, double h = 1e-6, double floor = 1e-10) {
    param.mutable_grad() = torch::Tensor();
    auto loss = f();
    loss.backward();
    auto grad = param.grad().detach().clone().flatten();
    auto flat = param.detach().view(-1);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick(0, flat.numel() - 1);
    double worst = 0.0;
    torch::NoGradGuard guard;
    const double gscale = grad.abs().max().item<double>();
    for (int i = 0; i < samples; ++i) {
        const int64_t k = pick(rng);
        const double orig = flat[k].item<double>();
        flat[k] = orig + h;
        const double up = f().item<double>();
        flat[k] = orig - h;
        const double down = f().item<double>();
        flat[k] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grad[k].item<double>();
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3 * gscale, floor});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    return worst;
}

// Largest |gradient| over all parameters of a module for the scalar f.
inline double global_grad_scale(torch::nn::Module& m, const std::function<torch::Tensor()>& f) {
    m.zero_grad();
    f().backward();
    double g = 0.0;
    for (const auto& p : m.parameters())
        if (p.grad().defined()) g = std::max(g, p.grad().abs().max().item<double>());
    m.zero_grad();
    return g;
}

}  // namespace oracle
