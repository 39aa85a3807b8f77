#include "wurstkit/semantic.hpp"

#include "wurstkit/errors.hpp"
#include "wurstkit/resize.hpp"

namespace wurstkit {

namespace {

void conv_bn_gelu(torch::nn::Sequential& seq, int64_t in, int64_t out, int64_t kernel, int64_t stride,
                  int64_t padding) {
    seq->push_back(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false)));
    seq->push_back(torch::nn::BatchNorm2d(out));
    seq->push_back(torch::nn::GELU());
}

}  // namespace

void CompressorConfig::validate() const {
    if (input_size < stride || input_size % stride != 0)
        throw ShapeError("compressor input size must be a positive multiple of 32");
    if (width < 1 || depth < 0 || backbone_channels < 1) throw ShapeError("compressor: invalid width/depth");
    for (double s : std)
        if (!(s > 0.0)) throw DomainError("compressor: normalization std must be > 0");
}

SemanticCompressorImpl::SemanticCompressorImpl(const CompressorConfig& cfg) : cfg(cfg) {
    cfg.validate();
    torch::nn::Sequential seq;
    // Patchify stem, stride 4.
    conv_bn_gelu(seq, 3, cfg.width, 4, 4, 0);
    const std::array<int64_t, 4> widths = {cfg.width, cfg.width * 2, cfg.width * 4, cfg.width * 4};
    for (size_t s = 1; s < widths.size(); ++s) {
        conv_bn_gelu(seq, widths[s - 1], widths[s], 3, 2, 1);
        for (int64_t d = 0; d < cfg.depth; ++d) conv_bn_gelu(seq, widths[s], widths[s], 3, 1, 1);
    }
    conv_bn_gelu(seq, widths.back(), cfg.backbone_channels, 1, 1, 0);
    backbone = register_module("backbone", seq);
    project = register_module("project",
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.backbone_channels, kSemanticChannels, 1)));
    norm = register_module("norm", torch::nn::BatchNorm2d(kSemanticChannels));
}

torch::Tensor SemanticCompressorImpl::normalize(const torch::Tensor& image) const {
    auto opts = image.options().requires_grad(false);
    auto mean = torch::tensor({cfg.mean[0], cfg.mean[1], cfg.mean[2]}, opts).view({1, 3, 1, 1});
    auto std = torch::tensor({cfg.std[0], cfg.std[1], cfg.std[2]}, opts).view({1, 3, 1, 1});
    return (image - mean) / std;
}

torch::Tensor SemanticCompressorImpl::forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3) throw ShapeError("compress: expected [B, 3, H, W]");
    if (image.size(2) % CompressorConfig::stride != 0 || image.size(3) % CompressorConfig::stride != 0)
        throw ShapeError("compress: spatial dims must be divisible by 32");
    return norm->forward(project->forward(backbone->forward(normalize(image))));
}

torch::Tensor SemanticCompressorImpl::compress(const torch::Tensor& image) {
    return forward(resize_bicubic(image, cfg.input_size, cfg.input_size));
}

torch::Tensor flatten_semantic(const torch::Tensor& latent) {
    if (latent.dim() != 4) throw ShapeError("flatten_semantic: expected [B, C, h, w]");
    return latent.flatten(2).transpose(1, 2);
}

torch::Tensor unflatten_semantic(const torch::Tensor& tokens, int64_t h, int64_t w) {
    if (tokens.dim() != 3 || tokens.size(1) != h * w) throw ShapeError("unflatten_semantic: token count mismatch");
    return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), h, w});
}

}  // namespace wurstkit
