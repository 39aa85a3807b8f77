#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

namespace wurstkit {

struct StageAConfig {
    int64_t image_channels = 3;
    int64_t latent_channels = 4;
    int64_t width = 64;
    int64_t expansion = 4;
    std::vector<int64_t> encoder_blocks = {1, 1};
    // The full-scale model uses {16, 1}.
    std::vector<int64_t> decoder_blocks = {2, 1};
    int64_t codebook_size = 256;
    double commitment = 0.25;
    double quantization_drop = 0.1;
    double mse_weight = 1.0;
    double perceptual_weight = 0.1;
    double adversarial_weight = 0.01;
    int64_t adversarial_start = 10000;
    int64_t revive_every = 1000;
    int64_t discriminator_width = 32;
    uint64_t perceptual_seed = 20230817;
};

// Encoder: pixel-unshuffle x2, stage 1, 4x4/2 downsample, stage 2, 1x1 to the
// latent channels, BatchNorm. Total spatial factor 4.
struct VQEncoderImpl : torch::nn::Module {
    explicit VQEncoderImpl(const StageAConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::PixelUnshuffle unshuffle{nullptr};
    torch::nn::Conv2d stem{nullptr}, down{nullptr}, to_latent{nullptr};
    torch::nn::ModuleList stage1{nullptr}, stage2{nullptr};
    torch::nn::BatchNorm2d latent_norm{nullptr};
};
TORCH_MODULE(VQEncoder);

struct VQDecoderImpl : torch::nn::Module {
    explicit VQDecoderImpl(const StageAConfig& cfg);
    torch::Tensor forward(const torch::Tensor& z);

    torch::nn::Conv2d from_latent{nullptr}, to_pixels{nullptr};
    torch::nn::ConvTranspose2d up{nullptr};
    torch::nn::ModuleList stage1{nullptr}, stage2{nullptr};
    torch::nn::PixelShuffle shuffle{nullptr};
};
TORCH_MODULE(VQDecoder);

struct Quantized {
    torch::Tensor indices;    // [B, h, w] int64
    torch::Tensor quantized;  // [B, z, h, w], codebook lookup
};

struct VectorQuantizerImpl : torch::nn::Module {
    VectorQuantizerImpl(int64_t codebook_size, int64_t dim);

    // Nearest entry in Euclidean distance; equidistant ties go to the lowest index.
    Quantized quantize(const torch::Tensor& latent) const;
    // Codebook rows for an index grid [B, h, w] -> [B, z, h, w].
    torch::Tensor lookup(const torch::Tensor& indices) const;

    torch::Tensor codebook;  // [K, z]
};
TORCH_MODULE(VectorQuantizer);

// z + (zq - z).detach(): forward value zq, gradient passes straight to z.
torch::Tensor straight_through(const torch::Tensor& z, const torch::Tensor& zq);

// Patch-level hinge-loss discriminator.
struct PatchDiscriminatorImpl : torch::nn::Module {
    PatchDiscriminatorImpl(int64_t in_channels, int64_t width);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Fixed 4-layer conv feature extractor with seeded random weights; never trained.
struct PerceptualNetImpl : torch::nn::Module {
    explicit PerceptualNetImpl(uint64_t seed);
    std::vector<torch::Tensor> features(const torch::Tensor& x);
    torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b);

    torch::nn::ModuleList convs{nullptr};
};
TORCH_MODULE(PerceptualNet);

struct VQGANImpl : torch::nn::Module {
    explicit VQGANImpl(const StageAConfig& cfg);

    // Unquantized latent. Requires H, W divisible by 4.
    torch::Tensor encode(const torch::Tensor& image);
    Quantized quantize(const torch::Tensor& latent) const { return quantizer->quantize(latent); }
    // Decoder output clipped to [0,1].
    torch::Tensor decode(const torch::Tensor& latent);
    torch::Tensor decode_raw(const torch::Tensor& latent) {
        return decoder->forward(latent.contiguous(at::MemoryFormat::ChannelsLast));
    }

    StageAConfig cfg;
    VQEncoder encoder{nullptr};
    VectorQuantizer quantizer{nullptr};
    VQDecoder decoder{nullptr};
};
TORCH_MODULE(VQGAN);

struct StageALossBreakdown {
    torch::Tensor total;
    double mse = 0.0;
    double perceptual = 0.0;
    double adversarial = 0.0;
    double vq = 0.0;
    double adversarial_weight = 0.0;
};

double adversarial_weight_at(const StageAConfig& cfg, int64_t step);

// total = mse_w * MSE + w_adv(step) * AL + pl_w * PL (+ vq_loss if defined).
// The discriminator is only evaluated when w_adv(step) > 0.
StageALossBreakdown stage_a_loss(const StageAConfig& cfg, const torch::Tensor& image,
                                 const torch::Tensor& reconstruction, PerceptualNet& perceptual,
                                 PatchDiscriminator* discriminator, int64_t step,
                                 const torch::Tensor& vq_loss = {});

torch::Tensor discriminator_hinge_loss(PatchDiscriminator& d, const torch::Tensor& real, const torch::Tensor& fake);

// Codebook + commitment terms for the straight-through quantizer.
torch::Tensor vq_loss(const torch::Tensor& z, const torch::Tensor& zq, double commitment);

bool maybe_drop_quantization(std::mt19937_64& rng, double rate);

}  // namespace wurstkit
