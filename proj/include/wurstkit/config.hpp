#pragma once

#include "json.hpp"
#include "wurstkit/dataset.hpp"
#include "wurstkit/diffusion.hpp"
#include "wurstkit/optim.hpp"
#include "wurstkit/semantic.hpp"
#include "wurstkit/stage_a.hpp"
#include "wurstkit/stage_b.hpp"
#include "wurstkit/stage_c.hpp"
#include "wurstkit/text.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wurstkit {

inline constexpr int kRunConfigSchema = 1;

struct ShapesConfig {
    int64_t image_size = 64;
};

struct SamplerConfig {
    int64_t steps_c = 60;
    int64_t steps_b = 12;
    double guidance_c = 4.0;
    double guidance_b = 4.0;
    uint64_t seed = 0;
    // Divide the codebook-token initialization by its standard deviation
    // before the first Stage B step.
    bool rescale_init = true;

    void validate() const;
};

struct StageSchedule {
    int64_t steps = 1000;
    int64_t batch_size = 32;
    AdamWConfig optim;
    int64_t checkpoint_every = 500;
};

struct TrainSection {
    uint64_t seed = 0;
    // JSON-lines manifest; empty means the synthetic corpus described by synth.
    std::string dataset;
    SynthSpec synth;
    StageSchedule stage_a{3000, 32, {}, 500};
    StageSchedule stage_b{5000, 32, {}, 500};
    StageSchedule stage_c{5000, 32, {}, 500};
    StageSchedule baseline{5000, 32, {}, 500};
    StageSchedule probe{2000, 32, {}, 500};
    StageSchedule extractor{1500, 64, {}, 500};
};

// Small classifier standing in for the Inception network used by FID/IS.
struct ExtractorConfig {
    int64_t input_size = 48;
    int64_t width = 16;
    int64_t feature_dim = 32;
    // Held-out corpus the extractor trains on.
    uint64_t corpus_seed = 7919;
    int64_t corpus_count = 2000;
    // Max relative brightness/contrast jitter during extractor training.
    double jitter = 0.15;
};

struct EvalConfig {
    ExtractorConfig extractor;
    std::vector<int64_t> jpeg_qualities = {95, 90, 80, 70, 60, 50};
    double brightness_percent = 10.0;
    double contrast_percent = 10.0;
    int64_t fid_samples = 256;
    int64_t batch_size = 32;
    std::vector<int64_t> bench_batches = {1, 4};
};

struct RunConfig {
    int schema_version = kRunConfigSchema;
    ShapesConfig shapes;
    NoiseSchedule schedule;
    StageAConfig stage_a;
    CompressorConfig compressor;
    TextConfig text;
    StageBConfig stage_b;
    StageCConfig stage_c;
    ProbeDecoderConfig probe;  // nested under stage_c.probe in JSON
    SamplerConfig sampler;
    TrainSection train;
    EvalConfig eval;

    // Copies shared settings (text, semantic geometry) into the stage configs
    // and validates cross-section consistency.
    void resolve();
    StageBConfig baseline_config() const;
};

// Every field is optional; unknown keys and schema mismatches throw FormatError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace wurstkit
