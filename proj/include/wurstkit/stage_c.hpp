#pragma once

#include "wurstkit/diffusion.hpp"
#include "wurstkit/layers.hpp"
#include "wurstkit/text.hpp"

#include <torch/torch.h>

#include <cstdint>

namespace wurstkit {

struct StageCConfig {
    int64_t latent_channels = 16;
    int64_t blocks = 4;
    int64_t width = 128;
    int64_t heads = 4;
    int64_t expansion = 4;
    int64_t time_dim = 64;
    int64_t cond_dim = 128;
    double text_dropout = 0.05;
    TextConfig text;

    void validate() const;
};

// ConvNeXt block followed by cross-attention over [text tokens ; time token].
struct StageCBlockImpl : torch::nn::Module {
    StageCBlockImpl(int64_t width, int64_t expansion, int64_t cond_dim, int64_t heads);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

    ConvNeXtBlock convnext{nullptr};
    AttentionBlock attention{nullptr};
};
TORCH_MODULE(StageCBlock);

// Flat sequence of blocks at constant resolution over the semantic latent.
struct StageCPriorImpl : torch::nn::Module {
    explicit StageCPriorImpl(const StageCConfig& cfg);

    // x: [B, 16, h, w], text: [B, L, d], t: [B].
    ABPrediction forward(const torch::Tensor& x, const torch::Tensor& text, const torch::Tensor& t);
    // Trunk output before the A/B head; same spatial size as x.
    torch::Tensor trunk(const torch::Tensor& x, const torch::Tensor& text, const torch::Tensor& t);

    StageCConfig cfg;
    TextEncoder text_encoder{nullptr};
    torch::nn::Conv2d embedding{nullptr};
    LayerNorm2d embedding_norm{nullptr};
    torch::nn::Sequential time_mapper{nullptr};
    torch::nn::Linear text_mapper{nullptr};
    torch::nn::LayerNorm text_norm{nullptr};
    torch::nn::ModuleList blocks{nullptr};
    LayerNorm2d head_norm{nullptr};
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(StageCPrior);

struct ProbeDecoderConfig {
    int64_t stages = 4;
    int64_t start_channels = 512;
    int64_t latent_channels = 16;

    int64_t stage_channels(int64_t i) const { return start_channels >> i; }
    // Closed-form parameter count of the decoder described by this config.
    int64_t parameter_count() const;
};

// Each stage: nearest x2 upsample, 3x3 conv, BatchNorm, GELU. Final 1x1 conv to RGB.
struct ProbeDecoderImpl : torch::nn::Module {
    explicit ProbeDecoderImpl(const ProbeDecoderConfig& cfg);
    // Raw output, unclipped (training).
    torch::Tensor forward(const torch::Tensor& latent);
    // Image clipped to [0,1].
    torch::Tensor decode(const torch::Tensor& latent);

    ProbeDecoderConfig cfg;
    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(ProbeDecoder);

int64_t count_parameters(const torch::nn::Module& module);

}  // namespace wurstkit
