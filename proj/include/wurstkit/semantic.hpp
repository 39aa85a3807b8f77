#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>

namespace wurstkit {

inline constexpr int64_t kSemanticChannels = 16;

struct CompressorConfig {
    int64_t input_size = 128;
    int64_t width = 32;
    // Extra stride-1 conv layers per strided stage.
    int64_t depth = 1;
    int64_t backbone_channels = 128;
    std::array<double, 3> mean = {0.485, 0.456, 0.406};
    std::array<double, 3> std = {0.229, 0.224, 0.225};

    // Total stride of the backbone (4 * 2 * 2 * 2).
    static constexpr int64_t stride = 32;
    int64_t latent_size() const { return input_size / stride; }
    void validate() const;
};

// Strided conv backbone (total stride 32) followed by the 1x1 projection to 16
// channels and a learned-affine normalization.
struct SemanticCompressorImpl : torch::nn::Module {
    explicit SemanticCompressorImpl(const CompressorConfig& cfg);

    // Channel-wise (x - mean) / std.
    torch::Tensor normalize(const torch::Tensor& image) const;
    // Image must already be at cfg.input_size; returns [B, 16, H/32, W/32].
    torch::Tensor forward(const torch::Tensor& image);
    // Bicubic resize to cfg.input_size, then forward.
    torch::Tensor compress(const torch::Tensor& image);

    CompressorConfig cfg;
    torch::nn::Sequential backbone{nullptr};
    torch::nn::Conv2d project{nullptr};
    torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(SemanticCompressor);

// [B, 16, h, w] -> [B, h*w, 16], row-major over space.
torch::Tensor flatten_semantic(const torch::Tensor& latent);
torch::Tensor unflatten_semantic(const torch::Tensor& tokens, int64_t h, int64_t w);

}  // namespace wurstkit
