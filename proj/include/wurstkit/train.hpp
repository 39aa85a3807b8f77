#pragma once

#include "wurstkit/checkpoint.hpp"
#include "wurstkit/config.hpp"
#include "wurstkit/dataset.hpp"
#include "wurstkit/models.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace wurstkit {

using LossTerms = std::vector<std::pair<std::string, double>>;

struct TrainOptions {
    // Upstream checkpoints are read from here and the result is written here.
    std::filesystem::path checkpoint_dir;
    // Continue from <dir>/<stage>.ckpt when it exists.
    bool resume = false;
    // Stop after this many completed steps (a checkpoint is written there);
    // -1 trains to the configured step count.
    int64_t stop_at = -1;
    // Defaults to <dir>/<stage>_loss.csv.
    std::filesystem::path loss_csv;
    // Pre-loaded corpus; otherwise built from cfg.train.
    const LoadedDataset* dataset = nullptr;
    std::function<void(int64_t step, int64_t total, const LossTerms&)> progress;
};

struct TrainResult {
    Checkpoint checkpoint;
    int64_t first_step = 0;
    // One entry per step taken in this call.
    std::vector<LossTerms> history;
};

// Seed of the per-step random stream: a pure function of (seed, step), so a
// resumed run only needs the step counter to continue the same sequence.
uint64_t step_seed(uint64_t seed, int64_t step);
uint64_t splitmix64(uint64_t x);

const StageSchedule& stage_schedule(const RunConfig& cfg, Stage s);

// Training corpus described by cfg.train.
LoadedDataset training_corpus(const RunConfig& cfg);

TrainResult run_training(Stage stage, const RunConfig& cfg, const TrainOptions& opts);

}  // namespace wurstkit
