#pragma once

#include "wurstkit/checkpoint.hpp"
#include "wurstkit/config.hpp"
#include "wurstkit/evalkit.hpp"
#include "wurstkit/semantic.hpp"
#include "wurstkit/stage_a.hpp"
#include "wurstkit/stage_b.hpp"
#include "wurstkit/stage_c.hpp"

#include <filesystem>
#include <string>

namespace wurstkit {

enum class Stage { a, b, c, baseline, probe, extractor };

// "stage_a", "stage_b", "stage_c", "baseline", "probe", "extractor".
std::string stage_name(Stage s);
// Accepts the names above and the CLI spellings "stage-a", "stage-b", "stage-c".
Stage parse_stage(const std::string& text);
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage s);

// Config snapshot stored in a checkpoint manifest.
RunConfig checkpoint_config(const Checkpoint& ck);
// Throws PreconditionError unless the checkpoint was written by stage s.
void require_stage(const Checkpoint& ck, Stage s);

// Modules rebuilt from their checkpoints, in eval mode, gradients disabled.
VQGAN load_stage_a(const Checkpoint& ck);
SemanticCompressor load_compressor(const Checkpoint& stage_b_ck);
StageBUNet load_stage_b(const Checkpoint& ck);  // stage_b or baseline
StageCPrior load_stage_c(const Checkpoint& ck);
ProbeDecoder load_probe(const Checkpoint& ck);
FeatureExtractor load_extractor(const Checkpoint& ck);

// Short content hash identifying a checkpoint's tensors.
std::string checkpoint_version(const Checkpoint& ck);

void freeze(torch::nn::Module& m);

}  // namespace wurstkit
