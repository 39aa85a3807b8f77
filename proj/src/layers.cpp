#include "wurstkit/layers.hpp"

#include "wurstkit/errors.hpp"

#include <cmath>

namespace wurstkit {

namespace F = torch::nn::functional;

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels, bool affine) : channels(channels) {
    if (affine) {
        weight = register_parameter("weight", torch::ones({channels}));
        bias = register_parameter("bias", torch::zeros({channels}));
    }
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
    auto y = x.permute({0, 2, 3, 1});
    y = torch::layer_norm(y, {channels}, weight, bias, 1e-6);
    return y.permute({0, 3, 1, 2});
}

GlobalResponseNormImpl::GlobalResponseNormImpl(int64_t channels) {
    gamma = register_parameter("gamma", torch::zeros({1, 1, 1, channels}));
    beta = register_parameter("beta", torch::zeros({1, 1, 1, channels}));
}

torch::Tensor GlobalResponseNormImpl::forward(const torch::Tensor& x) {
    auto gx = (x.square().sum({1, 2}, /*keepdim=*/true) + 1e-12).sqrt();
    auto nx = gx / (gx.mean(-1, /*keepdim=*/true) + 1e-6);
    return gamma * (x * nx) + beta + x;
}

ConvNeXtBlockImpl::ConvNeXtBlockImpl(int64_t channels, int64_t c_skip, int64_t expansion, int64_t kernel)
    : c_skip(c_skip) {
    depthwise = register_module(
        "depthwise",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, kernel).padding(kernel / 2).groups(channels)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels}).eps(1e-6)));
    expand = register_module("expand", torch::nn::Linear(channels + c_skip, channels * expansion));
    grn = register_module("grn", GlobalResponseNorm(channels * expansion));
    project = register_module("project", torch::nn::Linear(channels * expansion, channels));
}

torch::Tensor ConvNeXtBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
    auto y = norm->forward(depthwise->forward(x).permute({0, 2, 3, 1}));
    if (c_skip > 0) {
        if (!skip.defined() || skip.size(1) != c_skip || skip.size(2) != x.size(2) || skip.size(3) != x.size(3))
            throw ShapeError("ConvNeXtBlock: skip map does not match block geometry");
        y = torch::cat({y, skip.permute({0, 2, 3, 1})}, -1);
    }
    y = project->forward(grn->forward(torch::gelu(expand->forward(y))));
    return x + y.permute({0, 3, 1, 2});
}

TimestepBlockImpl::TimestepBlockImpl(int64_t channels, int64_t c_embed) {
    mapper = register_module("mapper", torch::nn::Linear(c_embed, channels * 2));
}

torch::Tensor TimestepBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
    auto ab = mapper->forward(embedding).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
    return x * (1 + ab[0]) + ab[1];
}

AttentionBlockImpl::AttentionBlockImpl(int64_t channels, int64_t c_cond, int64_t heads)
    : channels(channels), heads(heads) {
    if (heads < 1 || channels % heads != 0)
        throw ShapeError("AttentionBlock: channels must be divisible by heads");
    norm = register_module("norm", LayerNorm2d(channels, /*affine=*/false));
    kv_mapper = register_module("kv_mapper", torch::nn::Linear(c_cond, channels));
    to_q = register_module("to_q", torch::nn::Linear(channels, channels));
    to_k = register_module("to_k", torch::nn::Linear(channels, channels));
    to_v = register_module("to_v", torch::nn::Linear(channels, channels));
    to_out = register_module("to_out", torch::nn::Linear(channels, channels));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    const auto b = x.size(0);
    const auto h = x.size(2);
    const auto w = x.size(3);
    const auto d = channels / heads;
    auto tokens = norm->forward(x).flatten(2).transpose(1, 2);  // [B, HW, C]
    auto kv = torch::cat({tokens, kv_mapper->forward(torch::gelu(cond))}, 1);

    auto split = [&](const torch::Tensor& t) { return t.view({b, t.size(1), heads, d}).transpose(1, 2); };
    auto q = split(to_q->forward(tokens));
    auto k = split(to_k->forward(kv));
    auto v = split(to_v->forward(kv));
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-1, -2)) / std::sqrt(static_cast<double>(d)), -1);
    auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, h * w, channels});
    out = to_out->forward(out).transpose(1, 2).reshape({b, channels, h, w});
    return x + out;
}

torch::Tensor timestep_features(const torch::Tensor& t, int64_t dim, double max_positions) {
    const int64_t half = dim / 2;
    auto r = t * max_positions;
    const double scale = std::log(max_positions) / static_cast<double>(half - 1);
    auto freqs = torch::exp(torch::arange(half, t.options()) * -scale);
    auto args = r.unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({args.sin(), args.cos()}, 1);
    if (dim % 2 == 1) emb = F::pad(emb, F::PadFuncOptions({0, 1}));
    return emb;
}

void zero_init(torch::nn::Conv2d& conv) {
    torch::NoGradGuard guard;
    conv->weight.zero_();
    if (conv->bias.defined()) conv->bias.zero_();
}

}  // namespace wurstkit
