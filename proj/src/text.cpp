#include "wurstkit/text.hpp"

#include "wurstkit/errors.hpp"

#include <cctype>

namespace wurstkit {

uint32_t fnv1a32(std::string_view bytes) {
    uint32_t h = 2166136261u;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

std::vector<int64_t> tokenize(std::string_view caption, const TextConfig& cfg) {
    std::vector<int64_t> ids;
    std::string token;
    auto flush = [&] {
        if (!token.empty() && static_cast<int64_t>(ids.size()) < cfg.max_tokens)
            ids.push_back(static_cast<int64_t>(fnv1a32(token) % static_cast<uint32_t>(cfg.vocab_size)));
        token.clear();
    };
    for (char ch : caption) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c) != 0) {
            flush();
        } else {
            token.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    flush();
    ids.resize(static_cast<size_t>(cfg.max_tokens), cfg.vocab_size);
    return ids;
}

TextEncoderImpl::TextEncoderImpl(const TextConfig& cfg) : cfg(cfg) {
    if (cfg.vocab_size < 1 || cfg.max_tokens < 1 || cfg.dim < 1) throw ShapeError("text config: sizes must be >= 1");
    // Row vocab_size is the pad token.
    tokens = register_module("tokens", torch::nn::Embedding(cfg.vocab_size + 1, cfg.dim));
    {
        torch::NoGradGuard guard;
        tokens->weight.normal_(0.0, 1.0);
    }
    positions = register_parameter("positions", torch::randn({cfg.max_tokens, cfg.dim}) * 0.1);
    null_label = register_parameter("null_label", torch::randn({cfg.max_tokens, cfg.dim}));
}

torch::Tensor TextEncoderImpl::encode(std::string_view caption) {
    auto ids = tokenize(caption, cfg);
    auto idx = torch::tensor(ids, torch::kLong);
    return tokens->forward(idx) + positions;
}

torch::Tensor TextEncoderImpl::encode(const std::vector<std::string>& captions) {
    std::vector<int64_t> ids;
    ids.reserve(captions.size() * static_cast<size_t>(cfg.max_tokens));
    for (const auto& c : captions) {
        auto row = tokenize(c, cfg);
        ids.insert(ids.end(), row.begin(), row.end());
    }
    auto idx = torch::tensor(ids, torch::kLong).view({static_cast<int64_t>(captions.size()), cfg.max_tokens});
    return tokens->forward(idx) + positions.unsqueeze(0);
}

torch::Tensor TextEncoderImpl::null_batch(int64_t batch) const {
    return null_label.unsqueeze(0).expand({batch, cfg.max_tokens, cfg.dim});
}

torch::Tensor maybe_null(const torch::Tensor& embedding, const torch::Tensor& null_label, std::mt19937_64& rng,
                         double rate) {
    require_rate(rate, "text dropout rate");
    if (!embedding.sizes().equals(null_label.sizes())) throw ShapeError("maybe_null: null label shape mismatch");
    const bool drop = rate == 1.0 || (rate > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < rate);
    return drop ? null_label : embedding;
}

std::vector<bool> draw_drop_mask(std::mt19937_64& rng, int64_t batch, double rate) {
    require_rate(rate, "dropout rate");
    std::vector<bool> mask(static_cast<size_t>(batch), false);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto&& m : mask) m = rate == 1.0 || (rate > 0.0 && u(rng) < rate);
    return mask;
}

torch::Tensor apply_null_mask(const torch::Tensor& batch, const torch::Tensor& null_value,
                              const std::vector<bool>& mask) {
    if (static_cast<int64_t>(mask.size()) != batch.size(0)) throw ShapeError("apply_null_mask: mask size mismatch");
    std::vector<uint8_t> bytes(mask.begin(), mask.end());
    auto m = torch::tensor(bytes, torch::kBool);
    std::vector<int64_t> shape(static_cast<size_t>(batch.dim()), 1);
    shape[0] = batch.size(0);
    auto nv = null_value.dim() == batch.dim() ? null_value : null_value.unsqueeze(0);
    return torch::where(m.view(shape), nv.expand_as(batch), batch);
}

}  // namespace wurstkit
