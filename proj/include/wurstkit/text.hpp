#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace wurstkit {

struct TextConfig {
    int64_t vocab_size = 4096;
    int64_t max_tokens = 8;
    int64_t dim = 64;
};

uint32_t fnv1a32(std::string_view bytes);

// Lowercase (ASCII) whitespace tokenizer hashing tokens into [0, vocab). Output
// is padded with the pad id (= vocab_size) or truncated to max_tokens.
std::vector<int64_t> tokenize(std::string_view caption, const TextConfig& cfg);

// Trainable stand-in text tower: hashed-token embedding + learned positions,
// plus the learned null label used for classifier-free guidance.
struct TextEncoderImpl : torch::nn::Module {
    explicit TextEncoderImpl(const TextConfig& cfg);

    // [L, dim] for one caption.
    torch::Tensor encode(std::string_view caption);
    // [B, L, dim].
    torch::Tensor encode(const std::vector<std::string>& captions);
    // [B, L, dim] copies of the null label.
    torch::Tensor null_batch(int64_t batch) const;

    TextConfig cfg;
    torch::nn::Embedding tokens{nullptr};
    torch::Tensor positions;
    torch::Tensor null_label;
};
TORCH_MODULE(TextEncoder);

// Returns the null label with probability rate, else the embedding unchanged.
torch::Tensor maybe_null(const torch::Tensor& embedding, const torch::Tensor& null_label, std::mt19937_64& rng,
                         double rate = 0.05);

// Per-sample null substitution over a [B, ...] batch; mask[i] true means the
// sample was replaced.
torch::Tensor apply_null_mask(const torch::Tensor& batch, const torch::Tensor& null_value,
                              const std::vector<bool>& mask);
std::vector<bool> draw_drop_mask(std::mt19937_64& rng, int64_t batch, double rate);

}  // namespace wurstkit
