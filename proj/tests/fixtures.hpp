#pragma once

#include "wurstkit/config.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace fixtures {

// Removed (recursively) on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("wurstkit_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Small end-to-end geometry: 32x32 images, 8x8 Stage A latents, 2x2 semantics.
inline wurstkit::RunConfig tiny_config() {
    wurstkit::RunConfig c;
    c.shapes.image_size = 32;
    c.stage_a.width = 8;
    c.stage_a.expansion = 2;
    c.stage_a.codebook_size = 16;
    c.stage_a.decoder_blocks = {1, 1};
    c.compressor.input_size = 64;
    c.compressor.width = 8;
    c.compressor.backbone_channels = 16;
    c.compressor.depth = 0;
    c.text.dim = 16;
    c.text.max_tokens = 6;
    c.stage_b.widths = {8, 16};
    c.stage_b.blocks = {1, 1};
    c.stage_b.heads = {0, 2};
    c.stage_b.expansion = 2;
    c.stage_b.time_dim = 16;
    c.stage_b.cond_dim = 16;
    c.stage_c.blocks = 2;
    c.stage_c.width = 16;
    c.stage_c.heads = 2;
    c.stage_c.expansion = 2;
    c.stage_c.time_dim = 16;
    c.stage_c.cond_dim = 16;
    c.probe = {2, 16, 16};
    c.sampler.steps_c = 4;
    c.sampler.steps_b = 3;
    c.train.synth.count = 48;
    c.train.synth.image_size = 32;
    c.eval.extractor.corpus_count = 96;
    c.eval.extractor.width = 4;
    c.eval.extractor.feature_dim = 8;
    c.eval.extractor.input_size = 32;
    for (auto* s : {&c.train.stage_a, &c.train.stage_b, &c.train.stage_c, &c.train.baseline, &c.train.probe,
                    &c.train.extractor}) {
        s->steps = 4;
        s->batch_size = 4;
        s->checkpoint_every = 2;
        s->optim.lr = 1e-3;
        s->optim.warmup_steps = 2;
    }
    c.resolve();
    return c;
}

}  // namespace fixtures
