#include "wurstkit/stage_b.hpp"

#include "wurstkit/errors.hpp"
#include "wurstkit/resize.hpp"
#include "wurstkit/semantic.hpp"

namespace wurstkit {

void StageBConfig::validate() const {
    if (widths.empty() || widths.size() != blocks.size() || widths.size() != heads.size())
        throw ShapeError("StageB: widths, blocks and heads must have the same non-zero length");
    for (size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] < 1 || blocks[i] < 1 || heads[i] < 0) throw ShapeError("StageB: invalid stage description");
        if (heads[i] > 0 && widths[i] % heads[i] != 0) throw ShapeError("StageB: width not divisible by heads");
    }
    bool any_attention = false;
    for (auto h : heads) any_attention = any_attention || h > 0;
    if (any_attention && !use_semantic && !use_text)
        throw ShapeError("StageB: attention stages need semantic or text conditioning");
    require_rate(augment_probability, "augment probability");
    require_rate(augment_max_t, "augment max t");
    require_rate(semantic_dropout, "semantic dropout");
    require_rate(text_dropout, "text dropout");
}

StageBBlockImpl::StageBBlockImpl(int64_t channels, int64_t c_skip, int64_t expansion, int64_t time_dim,
                                 int64_t cond_dim, int64_t heads) {
    convnext = register_module("convnext", ConvNeXtBlock(channels, c_skip, expansion));
    timestep = register_module("timestep", TimestepBlock(channels, time_dim));
    if (heads > 0) attention = register_module("attention", AttentionBlock(channels, cond_dim, heads));
}

torch::Tensor StageBBlockImpl::forward(torch::Tensor x, const torch::Tensor& t_emb, const torch::Tensor& cond,
                                       const torch::Tensor& skip) {
    x = convnext->forward(x, skip);
    x = timestep->forward(x, t_emb);
    if (attention) x = attention->forward(x, cond);
    return x;
}

StageBUNetImpl::StageBUNetImpl(const StageBConfig& cfg) : cfg(cfg) {
    cfg.validate();
    if (cfg.use_text) text_encoder = register_module("text_encoder", TextEncoder(cfg.text));
    if (cfg.use_semantic) {
        null_semantic = register_parameter(
            "null_semantic", torch::randn({1, kSemanticChannels, cfg.semantic_size, cfg.semantic_size}));
        semantic_mapper = register_module("semantic_mapper", torch::nn::Linear(kSemanticChannels, cfg.cond_dim));
    }
    if (cfg.use_text) text_mapper = register_module("text_mapper", torch::nn::Linear(cfg.text.dim, cfg.cond_dim));

    embedding = register_module(
        "embedding", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, cfg.widths[0], 1)));
    embedding_norm = register_module("embedding_norm", LayerNorm2d(cfg.widths[0]));

    downscalers = register_module("downscalers", torch::nn::ModuleList());
    upscalers = register_module("upscalers", torch::nn::ModuleList());
    const size_t levels = cfg.widths.size();
    for (size_t i = 0; i < levels; ++i) {
        const int64_t c = cfg.widths[i];
        const int64_t c_skip = (cfg.heads[i] > 0 && cfg.use_semantic) ? kSemanticChannels : 0;
        torch::nn::ModuleList down, up;
        for (int64_t b = 0; b < cfg.blocks[i]; ++b) {
            down->push_back(StageBBlock(c, c_skip, cfg.expansion, cfg.time_dim, cfg.cond_dim, cfg.heads[i]));
            up->push_back(StageBBlock(c, c_skip, cfg.expansion, cfg.time_dim, cfg.cond_dim, cfg.heads[i]));
        }
        down_levels.push_back(register_module("down" + std::to_string(i), down));
        up_levels.push_back(register_module("up" + std::to_string(i), up));
        if (i + 1 < levels) {
            const int64_t next = cfg.widths[i + 1];
            downscalers->push_back(torch::nn::Sequential(
                LayerNorm2d(c), torch::nn::Conv2d(torch::nn::Conv2dOptions(c, next, 2).stride(2))));
            upscalers->push_back(torch::nn::Sequential(
                LayerNorm2d(next), torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(next, c, 2).stride(2))));
        }
    }
    head_norm = register_module("head_norm", LayerNorm2d(cfg.widths[0]));
    head = register_module("head",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.widths[0], cfg.latent_channels * 2, 1)));
    zero_init(head);
}

torch::Tensor StageBUNetImpl::semantic_null(int64_t batch) const {
    return null_semantic.expand({batch, -1, -1, -1});
}

torch::Tensor StageBUNetImpl::semantic_skip(const torch::Tensor& semantic, int64_t h, int64_t w) const {
    return resample(semantic, h, w, ResampleKernel::bicubic);
}

torch::Tensor StageBUNetImpl::conditioning_tokens(const torch::Tensor& semantic, const torch::Tensor& text) {
    std::vector<torch::Tensor> parts;
    if (cfg.use_semantic) parts.push_back(semantic_mapper->forward(flatten_semantic(semantic)));
    if (cfg.use_text) parts.push_back(text_mapper->forward(text));
    if (parts.empty()) return {};
    return torch::cat(parts, 1);
}

torch::Tensor StageBUNetImpl::run_level(torch::nn::ModuleList& level, size_t index, torch::Tensor x,
                                        const torch::Tensor& t_emb, const torch::Tensor& cond,
                                        const torch::Tensor& semantic) {
    torch::Tensor skip;
    if (cfg.use_semantic && cfg.heads[index] > 0) skip = semantic_skip(semantic, x.size(2), x.size(3));
    for (auto& m : *level) x = m->as<StageBBlock>()->forward(x, t_emb, cond, skip);
    return x;
}

ABPrediction StageBUNetImpl::forward(const torch::Tensor& x_t, const torch::Tensor& semantic,
                                     const torch::Tensor& text, const torch::Tensor& t) {
    if (x_t.dim() != 4 || x_t.size(1) != cfg.latent_channels) throw ShapeError("denoise_b: expected [B, 4, h, w]");
    const int64_t down_factor = int64_t{1} << (cfg.widths.size() - 1);
    if (x_t.size(2) % down_factor != 0 || x_t.size(3) % down_factor != 0)
        throw ShapeError("denoise_b: latent size not divisible by the U-Net depth");
    if (t.dim() != 1 || t.size(0) != x_t.size(0)) throw ShapeError("denoise_b: t must be a [B] vector");
    if (cfg.use_semantic &&
        (!semantic.defined() || semantic.dim() != 4 || semantic.size(0) != x_t.size(0) ||
         semantic.size(1) != kSemanticChannels))
        throw ShapeError("denoise_b: semantic conditioning must be [B, 16, h_c, w_c]");
    if (cfg.use_text && (!text.defined() || text.dim() != 3 || text.size(0) != x_t.size(0) ||
                         text.size(2) != cfg.text.dim))
        throw ShapeError("denoise_b: text conditioning must be [B, L, d]");

    auto t_emb = timestep_features(t.to(x_t.options()), cfg.time_dim);
    auto cond = conditioning_tokens(semantic, text);
    auto x = embedding_norm->forward(embedding->forward(x_t.contiguous(at::MemoryFormat::ChannelsLast)));

    const size_t levels = cfg.widths.size();
    std::vector<torch::Tensor> skips;
    for (size_t i = 0; i < levels; ++i) {
        if (i > 0) x = downscalers[i - 1]->as<torch::nn::Sequential>()->forward(x);
        x = run_level(down_levels[i], i, x, t_emb, cond, semantic);
        skips.push_back(x);
    }
    for (size_t i = levels; i-- > 0;) {
        if (i + 1 < levels) x = upscalers[i]->as<torch::nn::Sequential>()->forward(x) + skips[i];
        x = run_level(up_levels[i], i, x, t_emb, cond, semantic);
    }
    auto out = head->forward(head_norm->forward(x)).chunk(2, 1);
    return {out[0], out[1]};
}

torch::Tensor augment_conditioning(const torch::Tensor& semantic, const NoiseSchedule& schedule,
                                   const StageBConfig& cfg, std::mt19937_64& rng, torch::Generator& gen,
                                   std::vector<bool>* triggered) {
    require_rate(cfg.augment_probability, "augment probability");
    const int64_t b = semantic.size(0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> abar(static_cast<size_t>(b), 1.0);
    if (triggered) triggered->assign(static_cast<size_t>(b), false);
    bool any = false;
    for (int64_t i = 0; i < b; ++i) {
        if (cfg.augment_probability > 0.0 && u(rng) < cfg.augment_probability) {
            abar[static_cast<size_t>(i)] = schedule.alpha_bar(u(rng) * cfg.augment_max_t);
            if (triggered) (*triggered)[static_cast<size_t>(i)] = true;
            any = true;
        }
    }
    if (!any) return semantic;
    auto eps = at::randn(semantic.sizes(), gen, semantic.options().requires_grad(false));
    return forward_noise(semantic, torch::tensor(abar, semantic.options().requires_grad(false)), eps);
}

}  // namespace wurstkit
