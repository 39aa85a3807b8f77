#pragma once

#include "wurstkit/diffusion.hpp"
#include "wurstkit/layers.hpp"
#include "wurstkit/text.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

namespace wurstkit {

struct StageBConfig {
    int64_t latent_channels = 4;
    std::vector<int64_t> widths = {64, 128};
    std::vector<int64_t> blocks = {2, 4};
    // 0 = no cross-attention in that stage (time conditioning only).
    std::vector<int64_t> heads = {0, 4};
    int64_t expansion = 4;
    int64_t time_dim = 64;
    int64_t cond_dim = 64;
    // Semantic latent geometry (16 x h_c x w_c); the learned null has this shape.
    int64_t semantic_size = 4;
    bool use_semantic = true;
    bool use_text = true;
    double augment_probability = 0.5;
    double augment_max_t = 0.3;
    double semantic_dropout = 0.1;
    double text_dropout = 0.05;
    TextConfig text;

    void validate() const;
};

// ConvNeXt block, linear timestep conditioning and (optionally) cross-attention.
struct StageBBlockImpl : torch::nn::Module {
    StageBBlockImpl(int64_t channels, int64_t c_skip, int64_t expansion, int64_t time_dim, int64_t cond_dim,
                    int64_t heads);
    torch::Tensor forward(torch::Tensor x, const torch::Tensor& t_emb, const torch::Tensor& cond,
                          const torch::Tensor& skip);

    ConvNeXtBlock convnext{nullptr};
    TimestepBlock timestep{nullptr};
    AttentionBlock attention{nullptr};
};
TORCH_MODULE(StageBBlock);

// U-Net in the unquantized Stage A latent space. Attention-bearing stages
// receive the semantic latent twice: flattened into the cross-attention
// tokens and bicubic-resized into every ConvNeXt block as a skip map.
struct StageBUNetImpl : torch::nn::Module {
    explicit StageBUNetImpl(const StageBConfig& cfg);

    // semantic: [B, 16, h_c, w_c] or undefined when use_semantic is off;
    // text: [B, L, d] or undefined when use_text is off; t: [B].
    ABPrediction forward(const torch::Tensor& x_t, const torch::Tensor& semantic, const torch::Tensor& text,
                         const torch::Tensor& t);

    // [B, 16, h_c, w_c] copies of the learned semantic null.
    torch::Tensor semantic_null(int64_t batch) const;

    // Semantic skip maps handed to each stage, exposed for tests.
    torch::Tensor semantic_skip(const torch::Tensor& semantic, int64_t h, int64_t w) const;

    StageBConfig cfg;
    TextEncoder text_encoder{nullptr};
    torch::Tensor null_semantic;
    torch::nn::Conv2d embedding{nullptr};
    LayerNorm2d embedding_norm{nullptr};
    torch::nn::Linear semantic_mapper{nullptr}, text_mapper{nullptr};
    // One ModuleList of StageBBlock per level.
    std::vector<torch::nn::ModuleList> down_levels, up_levels;
    // downscalers[i] maps level i to i+1; upscalers[i] maps level i+1 to i.
    torch::nn::ModuleList downscalers{nullptr}, upscalers{nullptr};
    LayerNorm2d head_norm{nullptr};
    torch::nn::Conv2d head{nullptr};

private:
    torch::Tensor conditioning_tokens(const torch::Tensor& semantic, const torch::Tensor& text);
    torch::Tensor run_level(torch::nn::ModuleList& level, size_t index, torch::Tensor x, const torch::Tensor& t_emb,
                            const torch::Tensor& cond, const torch::Tensor& semantic);
};
TORCH_MODULE(StageBUNet);

// With probability cfg.augment_probability replaces the semantic latent by
// forward_noise(latent, t', eps), t' ~ U(0, augment_max_t), per sample.
torch::Tensor augment_conditioning(const torch::Tensor& semantic, const NoiseSchedule& schedule,
                                   const StageBConfig& cfg, std::mt19937_64& rng, torch::Generator& gen,
                                   std::vector<bool>* triggered = nullptr);

}  // namespace wurstkit
