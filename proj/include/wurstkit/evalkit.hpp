#pragma once

#include "json.hpp"
#include "wurstkit/config.hpp"
#include "wurstkit/resize.hpp"

#include <Eigen/Dense>
#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace wurstkit {

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased (n - 1)
    int64_t count = 0;

    int64_t dim() const { return mean.size(); }
};

// Streaming mean/covariance (Welford); partial states merge associatively.
class StatsAccumulator {
public:
    explicit StatsAccumulator(int64_t dim);
    void add(const Eigen::Ref<const Eigen::VectorXd>& x);
    // Rows of a [N, d] tensor.
    void add(const torch::Tensor& rows);
    void merge(const StatsAccumulator& other);
    FeatureStats finalize() const;
    int64_t count() const { return n_; }

private:
    int64_t n_ = 0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd m2_;
};

// Symmetric PSD square root by eigendecomposition. Eigenvalues down to
// -1e-8 * max(1, |lambda_max|) are clamped to zero; anything lower throws.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), evaluated through the
// symmetric form (S1^(1/2) S2 S1^(1/2))^(1/2).
double fid(const FeatureStats& a, const FeatureStats& b);

// exp(mean_i KL(p(y|x_i) || p(y))) over rows of class probabilities.
double inception_score(const Eigen::MatrixXd& probs);

// Small conv classifier: three strided conv stages, global pooling, a
// feature layer of size feature_dim (the FID features) and a linear head.
struct FeatureExtractorImpl : torch::nn::Module {
    FeatureExtractorImpl(const ExtractorConfig& cfg, int64_t classes);

    // Resample [B, 3, H, W] to the input size with the given kernel, clipped.
    // Inputs already at the input size pass through.
    torch::Tensor prepare(const torch::Tensor& images, ResampleKernel kernel = ResampleKernel::bicubic) const;
    torch::Tensor features(const torch::Tensor& prepared);
    torch::Tensor logits_from_features(const torch::Tensor& feats);
    torch::Tensor forward(const torch::Tensor& prepared) { return logits_from_features(features(prepared)); }

    ExtractorConfig cfg;
    int64_t classes;
    torch::nn::Sequential body{nullptr};
    torch::nn::Linear to_features{nullptr}, head{nullptr};
};
TORCH_MODULE(FeatureExtractor);

// Pinned class list of the extractor: shape-major over the synth vocabulary.
std::vector<std::string> extractor_classes(const SynthSpec& spec);
int64_t extractor_label(const SynthSpec& spec, const nlohmann::json& generator);

FeatureStats extract_stats(FeatureExtractor& extractor, const torch::Tensor& images,
                           ResampleKernel kernel = ResampleKernel::bicubic, int64_t batch = 64);
torch::Tensor class_probabilities(FeatureExtractor& extractor, const torch::Tensor& images, int64_t batch = 64);

struct Manipulation {
    enum class Kind { identity, jpeg, resample, palette, brightness, contrast };
    Kind kind = Kind::identity;
    // jpeg: quality 1..100; palette: colors; brightness/contrast: signed percent.
    double value = 0.0;
    ResampleKernel kernel = ResampleKernel::bicubic;

    void validate() const;
    std::string label() const;
    // "identity", "jpeg:95", "resample:nearest", "palette:256", "brightness:+10", "contrast:-10".
    static Manipulation parse(const std::string& text);
};

// Applies a pixel-space manipulation to one [3, H, W] image. Every kind keeps
// the shape and [0,1] range except resample, which resizes to target_size
// with the chosen kernel (it stands for the extractor's input resize).
torch::Tensor manipulate(const torch::Tensor& image, const Manipulation& spec, int64_t target_size);

// Lossy baseline-JPEG round trip: 8-bit YCbCr, 4:2:0 chroma, 8x8 DCT and
// quality-scaled standard tables. Entropy coding is lossless and skipped.
torch::Tensor jpeg_roundtrip(const torch::Tensor& image, int quality);
// Standard luminance/chrominance tables scaled for a quality in [1,100].
std::array<int, 64> jpeg_quant_table(bool chroma, int quality);

// Median-cut quantization to at most `colors` colors. Images that already use
// no more distinct colors come back unchanged.
torch::Tensor palette_quantize(const torch::Tensor& image, int64_t colors);

struct AuditRow {
    std::string spec;
    double fid = 0.0;
    int64_t n = 0;
};

struct AuditReport {
    std::vector<AuditRow> rows;
    std::string extractor_version;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

// FID between the original set (bicubic-prepared) and each manipulated set.
AuditReport fid_audit(FeatureExtractor& extractor, const torch::Tensor& images,
                      const std::vector<Manipulation>& specs, const std::string& extractor_version,
                      int64_t batch = 64);

// Default audit list from the eval config.
std::vector<Manipulation> default_audit_specs(const EvalConfig& cfg);

// One-sided exact binomial tail P(X >= k), X ~ Bin(n, p).
double binomial_upper_tail(int64_t k, int64_t n, double p);

// Red-dominant: at least min_fraction of the pixels are clearly red
// (R > 0.5 and R - max(G, B) > 0.35).
bool red_dominant(const torch::Tensor& image, double min_fraction = 0.02);

}  // namespace wurstkit
