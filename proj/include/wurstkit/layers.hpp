#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace wurstkit {

// LayerNorm over the channel dimension of an NCHW tensor.
struct LayerNorm2dImpl : torch::nn::Module {
    explicit LayerNorm2dImpl(int64_t channels, bool affine = true);
    torch::Tensor forward(const torch::Tensor& x);

    int64_t channels;
    torch::Tensor weight, bias;
};
TORCH_MODULE(LayerNorm2d);

// Global response normalization on channels-last input [B, H, W, C].
struct GlobalResponseNormImpl : torch::nn::Module {
    explicit GlobalResponseNormImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor gamma, beta;
};
TORCH_MODULE(GlobalResponseNorm);

// ConvNeXt block: depthwise 7x7, LayerNorm, pointwise expansion, GELU, GRN,
// pointwise projection, residual. An optional skip map [B, c_skip, H, W] is
// concatenated after the normalization, before the pointwise layers.
struct ConvNeXtBlockImpl : torch::nn::Module {
    ConvNeXtBlockImpl(int64_t channels, int64_t c_skip = 0, int64_t expansion = 4, int64_t kernel = 7);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip = {});

    int64_t c_skip;
    torch::nn::Conv2d depthwise{nullptr};
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear expand{nullptr};
    GlobalResponseNorm grn{nullptr};
    torch::nn::Linear project{nullptr};
};
TORCH_MODULE(ConvNeXtBlock);

// Linear conditioning x * (1 + a) + b with (a, b) from an embedding vector.
struct TimestepBlockImpl : torch::nn::Module {
    TimestepBlockImpl(int64_t channels, int64_t c_embed);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding);

    torch::nn::Linear mapper{nullptr};
};
TORCH_MODULE(TimestepBlock);

// Multi-head attention from the feature map onto [own tokens ; conditioning
// tokens]. Conditioning is [B, L, c_cond]. Residual.
struct AttentionBlockImpl : torch::nn::Module {
    AttentionBlockImpl(int64_t channels, int64_t c_cond, int64_t heads);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

    int64_t channels, heads;
    LayerNorm2d norm{nullptr};
    torch::nn::Linear kv_mapper{nullptr};
    torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(AttentionBlock);

// Sinusoidal features of t in [0,1], [B] -> [B, dim].
torch::Tensor timestep_features(const torch::Tensor& t, int64_t dim, double max_positions = 10000.0);

// Sets weight and bias of a layer to zero so it initially predicts 0.
void zero_init(torch::nn::Conv2d& conv);

}  // namespace wurstkit
