#pragma once

#include "json.hpp"
#include "wurstkit/config.hpp"
#include "wurstkit/models.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace wurstkit {

// Denoiser forward calls, one per batched network evaluation.
struct PassCounter {
    int64_t stage_c = 0;
    int64_t stage_b = 0;
    int64_t total() const { return stage_c + stage_b; }
};

struct StageTimings {
    double stage_c = 0.0;
    double stage_b = 0.0;
    double decode = 0.0;
    double total = 0.0;
};

struct Generation {
    torch::Tensor images;    // [B, 3, H, W] in [0,1]
    torch::Tensor semantic;  // [B, 16, h_c, w_c]
    torch::Tensor latent;    // [B, 4, h, w]
    PassCounter passes;
    StageTimings timings;
};

// Uniform random codebook rows per cell: [batch, z, h, w].
torch::Tensor init_stage_b_latents(const torch::Tensor& codebook, int64_t batch, int64_t h, int64_t w,
                                   std::mt19937_64& rng);

struct CompressionRatio {
    std::string name;
    int64_t from = 0;
    int64_t to = 0;
    // Reduced fraction from/to.
    int64_t num = 0;
    int64_t den = 1;
    int64_t floored() const { return num / den; }
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    // "42:1 (128/3 = 42.67)"
    std::string text() const;
};

// Per-stage and total spatial ratios for image -> Stage A latent -> semantic latent.
std::vector<CompressionRatio> compression_report(int64_t image_size, int64_t stage_a_size, int64_t semantic_size);

// Inference over immutable trained stages. Every sample draws from its own
// random streams derived from its seed, so its noise does not depend on how
// samples are batched together; outputs then agree up to float reduction order.
class Pipeline {
public:
    Pipeline(VQGAN stage_a, StageBUNet stage_b, SemanticCompressor compressor, StageCPrior stage_c,
             NoiseSchedule schedule, int64_t image_size = 64);

    // stage_a.ckpt, stage_b.ckpt and stage_c.ckpt from a directory.
    static Pipeline load(const std::filesystem::path& dir);

    torch::Tensor sample_stage_c(const std::vector<std::string>& prompts, const std::vector<uint64_t>& seeds,
                                 const SamplerConfig& cfg, PassCounter* passes = nullptr);
    torch::Tensor sample_stage_b(const torch::Tensor& semantic, const std::vector<std::string>& prompts,
                                 const std::vector<uint64_t>& seeds, const SamplerConfig& cfg,
                                 PassCounter* passes = nullptr);
    Generation generate(const std::vector<std::string>& prompts, const std::vector<uint64_t>& seeds,
                        const SamplerConfig& cfg);

    // Semantic latents of real images (eval-mode compressor).
    torch::Tensor compress(const torch::Tensor& images);
    torch::Tensor decode(const torch::Tensor& latent);

    int64_t image_size() const { return latent_size_ * 4; }
    int64_t latent_size() const { return latent_size_; }
    int64_t semantic_size() const { return semantic_size_; }
    VQGAN& stage_a() { return stage_a_; }
    StageBUNet& stage_b() { return stage_b_; }
    StageCPrior& stage_c() { return stage_c_; }
    const NoiseSchedule& schedule() const { return schedule_; }

private:
    VQGAN stage_a_;
    StageBUNet stage_b_;
    SemanticCompressor compressor_;
    StageCPrior stage_c_;
    NoiseSchedule schedule_;
    int64_t latent_size_ = 16;
    int64_t semantic_size_ = 4;
};

// JSON record of one generation call.
nlohmann::json generation_record(const std::string& prompt, uint64_t seed, const SamplerConfig& cfg,
                                 const Generation& g);

struct LatencyRow {
    int64_t batch = 0;
    int64_t steps_c = 0;
    int64_t steps_b = 0;
    PassCounter passes;
    StageTimings timings;
    // Stage C share of the denoising steps, steps_c / (steps_c + steps_b).
    double stage_c_step_share() const;
};

struct LatencyReport {
    std::vector<LatencyRow> rows;
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

// One timed generate() per batch size; prompts are repeated and seeds run
// upward from cfg.seed.
LatencyReport latency_bench(Pipeline& pipeline, const std::vector<int64_t>& batches, const SamplerConfig& cfg,
                            const std::string& prompt);

}  // namespace wurstkit
