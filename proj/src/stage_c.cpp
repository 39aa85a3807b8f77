#include "wurstkit/stage_c.hpp"

#include "wurstkit/errors.hpp"

namespace wurstkit {

void StageCConfig::validate() const {
    if (blocks < 1) throw ShapeError("StageC: block count must be >= 1");
    if (heads < 1 || width < heads || width % heads != 0) throw ShapeError("StageC: width must be a multiple of heads");
    require_rate(text_dropout, "text dropout");
}

StageCBlockImpl::StageCBlockImpl(int64_t width, int64_t expansion, int64_t cond_dim, int64_t heads) {
    convnext = register_module("convnext", ConvNeXtBlock(width, 0, expansion));
    attention = register_module("attention", AttentionBlock(width, cond_dim, heads));
}

torch::Tensor StageCBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    return attention->forward(convnext->forward(x), cond);
}

StageCPriorImpl::StageCPriorImpl(const StageCConfig& cfg) : cfg(cfg) {
    cfg.validate();
    text_encoder = register_module("text_encoder", TextEncoder(cfg.text));
    embedding = register_module(
        "embedding", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, cfg.width, 1)));
    embedding_norm = register_module("embedding_norm", LayerNorm2d(cfg.width));
    time_mapper = register_module("time_mapper",
                                  torch::nn::Sequential(torch::nn::Linear(cfg.time_dim, cfg.cond_dim), torch::nn::GELU(),
                                                        torch::nn::Linear(cfg.cond_dim, cfg.cond_dim)));
    text_mapper = register_module("text_mapper", torch::nn::Linear(cfg.text.dim, cfg.cond_dim));
    text_norm =
        register_module("text_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.cond_dim}).eps(1e-6)));
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int64_t i = 0; i < cfg.blocks; ++i)
        blocks->push_back(StageCBlock(cfg.width, cfg.expansion, cfg.cond_dim, cfg.heads));
    head_norm = register_module("head_norm", LayerNorm2d(cfg.width));
    head = register_module("head",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.width, cfg.latent_channels * 2, 1)));
    zero_init(head);
}

torch::Tensor StageCPriorImpl::trunk(const torch::Tensor& x, const torch::Tensor& text, const torch::Tensor& t) {
    if (x.dim() != 4 || x.size(1) != cfg.latent_channels) throw ShapeError("denoise_c: expected [B, 16, h, w]");
    if (text.dim() != 3 || text.size(0) != x.size(0) || text.size(2) != cfg.text.dim)
        throw ShapeError("denoise_c: text conditioning must be [B, L, d]");
    if (t.dim() != 1 || t.size(0) != x.size(0)) throw ShapeError("denoise_c: t must be a [B] vector");
    auto time_token = time_mapper->forward(timestep_features(t.to(x.options()), cfg.time_dim)).unsqueeze(1);
    auto cond = torch::cat({text_norm->forward(text_mapper->forward(text)), time_token}, 1);
    auto h = embedding_norm->forward(embedding->forward(x.contiguous(at::MemoryFormat::ChannelsLast)));
    for (auto& m : *blocks) h = m->as<StageCBlock>()->forward(h, cond);
    return h;
}

ABPrediction StageCPriorImpl::forward(const torch::Tensor& x, const torch::Tensor& text, const torch::Tensor& t) {
    auto out = head->forward(head_norm->forward(trunk(x, text, t))).chunk(2, 1);
    return {out[0], out[1]};
}

int64_t ProbeDecoderConfig::parameter_count() const {
    int64_t total = 0;
    int64_t in = latent_channels;
    for (int64_t i = 0; i < stages; ++i) {
        const int64_t out = stage_channels(i);
        total += in * out * 9 + out;  // 3x3 conv + bias
        total += 2 * out;             // BatchNorm affine
        in = out;
    }
    return total + in * 3 + 3;
}

ProbeDecoderImpl::ProbeDecoderImpl(const ProbeDecoderConfig& cfg) : cfg(cfg) {
    if (cfg.stages < 1 || cfg.stage_channels(cfg.stages - 1) < 1) throw ShapeError("probe decoder: invalid channels");
    torch::nn::Sequential seq;
    int64_t in = cfg.latent_channels;
    for (int64_t i = 0; i < cfg.stages; ++i) {
        const int64_t out = cfg.stage_channels(i);
        seq->push_back(torch::nn::Upsample(
            torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
        seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
        seq->push_back(torch::nn::BatchNorm2d(out));
        seq->push_back(torch::nn::GELU());
        in = out;
    }
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 1)));
    net = register_module("net", seq);
}

torch::Tensor ProbeDecoderImpl::forward(const torch::Tensor& latent) {
    if (latent.dim() != 4 || latent.size(1) != cfg.latent_channels) throw ShapeError("probe_decode: expected [B, 16, h, w]");
    return net->forward(latent);
}

torch::Tensor ProbeDecoderImpl::decode(const torch::Tensor& latent) { return forward(latent).clamp(0.0, 1.0); }

int64_t count_parameters(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace wurstkit
