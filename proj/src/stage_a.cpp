#include "wurstkit/stage_a.hpp"

#include "wurstkit/errors.hpp"
#include "wurstkit/layers.hpp"

#include <cmath>

namespace wurstkit {

namespace {

torch::nn::ModuleList make_blocks(int64_t count, int64_t width, int64_t expansion) {
    torch::nn::ModuleList list;
    for (int64_t i = 0; i < count; ++i) list->push_back(ConvNeXtBlock(width, 0, expansion));
    return list;
}

torch::Tensor run_blocks(torch::nn::ModuleList& list, torch::Tensor x) {
    for (auto& m : *list) x = m->as<ConvNeXtBlock>()->forward(x);
    return x;
}

// Exact squared differences (no |a|^2 - 2ab + |b|^2 expansion) so equidistant
// entries compare bit-equal; argmin returns the first minimum.
torch::Tensor nearest_indices(const torch::Tensor& vectors, const torch::Tensor& codebook) {
    torch::NoGradGuard guard;
    auto flat = vectors.to(codebook.dtype());
    auto indices = torch::empty({flat.size(0)}, torch::kLong);
    constexpr int64_t chunk = 4096;
    for (int64_t start = 0; start < flat.size(0); start += chunk) {
        const auto end = std::min(start + chunk, flat.size(0));
        auto d = (flat.slice(0, start, end).unsqueeze(1) - codebook.unsqueeze(0)).square().sum(-1);
        indices.slice(0, start, end).copy_(d.argmin(1));
    }
    return indices;
}

}  // namespace

VQEncoderImpl::VQEncoderImpl(const StageAConfig& cfg) {
    if (cfg.encoder_blocks.size() != 2) throw ShapeError("StageA: encoder needs exactly 2 stages");
    unshuffle = register_module("unshuffle", torch::nn::PixelUnshuffle(2));
    stem = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.image_channels * 4, cfg.width, 1)));
    stage1 = register_module("stage1", make_blocks(cfg.encoder_blocks[0], cfg.width, cfg.expansion));
    down = register_module("down",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.width, cfg.width, 4).stride(2).padding(1)));
    stage2 = register_module("stage2", make_blocks(cfg.encoder_blocks[1], cfg.width, cfg.expansion));
    to_latent =
        register_module("to_latent", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.width, cfg.latent_channels, 1)));
    latent_norm = register_module("latent_norm", torch::nn::BatchNorm2d(cfg.latent_channels));
}

torch::Tensor VQEncoderImpl::forward(const torch::Tensor& x) {
    auto h = stem->forward(unshuffle->forward(x));
    h = run_blocks(stage1, h);
    h = run_blocks(stage2, down->forward(h));
    return latent_norm->forward(to_latent->forward(h));
}

VQDecoderImpl::VQDecoderImpl(const StageAConfig& cfg) {
    if (cfg.decoder_blocks.size() != 2) throw ShapeError("StageA: decoder needs exactly 2 stages");
    from_latent = register_module(
        "from_latent", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, cfg.width, 1)));
    stage1 = register_module("stage1", make_blocks(cfg.decoder_blocks[0], cfg.width, cfg.expansion));
    up = register_module(
        "up", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(cfg.width, cfg.width, 4).stride(2).padding(1)));
    stage2 = register_module("stage2", make_blocks(cfg.decoder_blocks[1], cfg.width, cfg.expansion));
    to_pixels = register_module(
        "to_pixels", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.width, cfg.image_channels * 4, 1)));
    shuffle = register_module("shuffle", torch::nn::PixelShuffle(2));
}

torch::Tensor VQDecoderImpl::forward(const torch::Tensor& z) {
    auto h = run_blocks(stage1, from_latent->forward(z));
    h = run_blocks(stage2, up->forward(h));
    return shuffle->forward(to_pixels->forward(h));
}

VectorQuantizerImpl::VectorQuantizerImpl(int64_t codebook_size, int64_t dim) {
    if (codebook_size < 1) throw ShapeError("codebook needs at least one entry");
    const double bound = 1.0 / static_cast<double>(codebook_size);
    codebook = register_parameter("codebook", torch::empty({codebook_size, dim}).uniform_(-bound, bound));
}

Quantized VectorQuantizerImpl::quantize(const torch::Tensor& latent) const {
    if (latent.dim() != 4 || latent.size(1) != codebook.size(1))
        throw ShapeError("quantize: latent channels do not match codebook dimension");
    auto indices = nearest_indices(latent.permute({0, 2, 3, 1}).reshape({-1, codebook.size(1)}), codebook)
                       .view({latent.size(0), latent.size(2), latent.size(3)});
    return {indices, lookup(indices).to(latent.dtype())};
}

torch::Tensor VectorQuantizerImpl::lookup(const torch::Tensor& indices) const {
    if (indices.numel() > 0 && (indices.min().item<int64_t>() < 0 || indices.max().item<int64_t>() >= codebook.size(0)))
        throw ShapeError("lookup: token index outside the codebook");
    return codebook.index_select(0, indices.flatten())
        .view({indices.size(0), indices.size(1), indices.size(2), codebook.size(1)})
        .permute({0, 3, 1, 2})
        .contiguous();
}

torch::Tensor straight_through(const torch::Tensor& z, const torch::Tensor& zq) {
    return z + (zq - z).detach();
}

torch::Tensor vq_loss(const torch::Tensor& z, const torch::Tensor& zq, double commitment) {
    return (zq - z.detach()).square().mean() + commitment * (z - zq.detach()).square().mean();
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t in_channels, int64_t width) {
    using torch::nn::Conv2dOptions;
    net = register_module(
        "net", torch::nn::Sequential(
                   torch::nn::Conv2d(Conv2dOptions(in_channels, width, 4).stride(2).padding(1)),
                   torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                   torch::nn::Conv2d(Conv2dOptions(width, width * 2, 4).stride(2).padding(1)),
                   torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                   torch::nn::Conv2d(Conv2dOptions(width * 2, 1, 3).padding(1))));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return net->forward(x); }

PerceptualNetImpl::PerceptualNetImpl(uint64_t seed) {
    using torch::nn::Conv2dOptions;
    convs = register_module("convs", torch::nn::ModuleList());
    const std::vector<std::array<int64_t, 3>> layers = {{3, 16, 1}, {16, 32, 2}, {32, 32, 2}, {32, 32, 1}};
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    torch::NoGradGuard guard;
    for (const auto& [in, out, stride] : layers) {
        torch::nn::Conv2d conv(Conv2dOptions(in, out, 3).stride(stride).padding(1));
        const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
        conv->weight.copy_(at::normal(0.0, std, conv->weight.sizes(), gen));
        conv->bias.zero_();
        conv->weight.set_requires_grad(false);
        conv->bias.set_requires_grad(false);
        convs->push_back(conv);
    }
}

std::vector<torch::Tensor> PerceptualNetImpl::features(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto h = x;
    for (size_t i = 0; i < convs->size(); ++i) {
        h = convs[i]->as<torch::nn::Conv2d>()->forward(h);
        if (i + 1 < convs->size()) h = torch::relu(h);
        out.push_back(h);
    }
    return out;
}

torch::Tensor PerceptualNetImpl::distance(const torch::Tensor& a, const torch::Tensor& b) {
    auto fa = features(a);
    auto fb = features(b);
    auto total = torch::zeros({}, a.options());
    for (size_t i = 0; i < fa.size(); ++i) total = total + (fa[i] - fb[i]).square().mean();
    return total;
}

VQGANImpl::VQGANImpl(const StageAConfig& cfg) : cfg(cfg) {
    encoder = register_module("encoder", VQEncoder(cfg));
    quantizer = register_module("quantizer", VectorQuantizer(cfg.codebook_size, cfg.latent_channels));
    decoder = register_module("decoder", VQDecoder(cfg));
}

torch::Tensor VQGANImpl::encode(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != cfg.image_channels)
        throw ShapeError("encode: expected [B, 3, H, W]");
    if (image.size(2) % 4 != 0 || image.size(3) % 4 != 0)
        throw ShapeError("encode: H and W must be divisible by 4");
    return encoder->forward(image.contiguous(at::MemoryFormat::ChannelsLast));
}

torch::Tensor VQGANImpl::decode(const torch::Tensor& latent) {
    if (latent.dim() != 4 || latent.size(1) != cfg.latent_channels)
        throw ShapeError("decode: expected [B, z, h, w]");
    return decode_raw(latent).clamp(0.0, 1.0);
}

double adversarial_weight_at(const StageAConfig& cfg, int64_t step) {
    return step < cfg.adversarial_start ? 0.0 : cfg.adversarial_weight;
}

StageALossBreakdown stage_a_loss(const StageAConfig& cfg, const torch::Tensor& image,
                                 const torch::Tensor& reconstruction, PerceptualNet& perceptual,
                                 PatchDiscriminator* discriminator, int64_t step, const torch::Tensor& vq) {
    if (!image.sizes().equals(reconstruction.sizes())) throw ShapeError("stage_a_loss: shape mismatch");
    StageALossBreakdown out;
    auto mse = (reconstruction - image).square().mean();
    auto pl = perceptual->distance(reconstruction, image);
    out.total = cfg.mse_weight * mse + cfg.perceptual_weight * pl;
    out.mse = mse.item<double>();
    out.perceptual = pl.item<double>();
    out.adversarial_weight = adversarial_weight_at(cfg, step);
    if (out.adversarial_weight > 0.0 && discriminator != nullptr) {
        auto al = -(*discriminator)->forward(reconstruction).mean();
        out.total = out.total + out.adversarial_weight * al;
        out.adversarial = al.item<double>();
    }
    if (vq.defined()) {
        out.total = out.total + vq;
        out.vq = vq.item<double>();
    }
    return out;
}

torch::Tensor discriminator_hinge_loss(PatchDiscriminator& d, const torch::Tensor& real, const torch::Tensor& fake) {
    return torch::relu(1.0 - d->forward(real)).mean() + torch::relu(1.0 + d->forward(fake.detach())).mean();
}

bool maybe_drop_quantization(std::mt19937_64& rng, double rate) {
    require_rate(rate, "quantization drop rate");
    if (rate == 0.0) return false;
    if (rate == 1.0) return true;
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < rate;
}

}  // namespace wurstkit
