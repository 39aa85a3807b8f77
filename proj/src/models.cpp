#include "wurstkit/models.hpp"

#include "wurstkit/errors.hpp"

namespace wurstkit {

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::a: return "stage_a";
        case Stage::b: return "stage_b";
        case Stage::c: return "stage_c";
        case Stage::baseline: return "baseline";
        case Stage::probe: return "probe";
        case Stage::extractor: return "extractor";
    }
    return "unknown";
}

Stage parse_stage(const std::string& text) {
    if (text == "stage_a" || text == "stage-a") return Stage::a;
    if (text == "stage_b" || text == "stage-b") return Stage::b;
    if (text == "stage_c" || text == "stage-c") return Stage::c;
    if (text == "baseline") return Stage::baseline;
    if (text == "probe") return Stage::probe;
    if (text == "extractor") return Stage::extractor;
    throw DomainError("unknown stage '" + text + "'");
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage s) {
    return dir / (stage_name(s) + ".ckpt");
}

RunConfig checkpoint_config(const Checkpoint& ck) {
    if (!ck.manifest.contains("config")) throw FormatError("checkpoint manifest has no config snapshot");
    return parse_run_config(ck.manifest.at("config"));
}

void require_stage(const Checkpoint& ck, Stage s) {
    if (ck.stage() != stage_name(s))
        throw PreconditionError("expected a " + stage_name(s) + " checkpoint, got '" + ck.stage() + "'");
}

void freeze(torch::nn::Module& m) {
    m.eval();
    for (auto& p : m.parameters()) p.set_requires_grad(false);
}

VQGAN load_stage_a(const Checkpoint& ck) {
    require_stage(ck, Stage::a);
    VQGAN m(checkpoint_config(ck).stage_a);
    import_module(*m, "vqgan.", ck.tensors);
    freeze(*m);
    return m;
}

SemanticCompressor load_compressor(const Checkpoint& ck) {
    require_stage(ck, Stage::b);
    SemanticCompressor m(checkpoint_config(ck).compressor);
    import_module(*m, "compressor.", ck.tensors);
    freeze(*m);
    return m;
}

StageBUNet load_stage_b(const Checkpoint& ck) {
    const auto cfg = checkpoint_config(ck);
    StageBConfig bc;
    if (ck.stage() == stage_name(Stage::b)) bc = cfg.stage_b;
    else if (ck.stage() == stage_name(Stage::baseline)) bc = cfg.baseline_config();
    else throw PreconditionError("expected a stage_b or baseline checkpoint, got '" + ck.stage() + "'");
    StageBUNet m(bc);
    import_module(*m, "unet.", ck.tensors);
    freeze(*m);
    return m;
}

StageCPrior load_stage_c(const Checkpoint& ck) {
    require_stage(ck, Stage::c);
    StageCPrior m(checkpoint_config(ck).stage_c);
    import_module(*m, "prior.", ck.tensors);
    freeze(*m);
    return m;
}

ProbeDecoder load_probe(const Checkpoint& ck) {
    require_stage(ck, Stage::probe);
    ProbeDecoder m(checkpoint_config(ck).probe);
    import_module(*m, "probe.", ck.tensors);
    freeze(*m);
    return m;
}

FeatureExtractor load_extractor(const Checkpoint& ck) {
    require_stage(ck, Stage::extractor);
    const auto cfg = checkpoint_config(ck);
    const auto classes = ck.manifest.at("classes").get<std::vector<std::string>>();
    FeatureExtractor m(cfg.eval.extractor, static_cast<int64_t>(classes.size()));
    import_module(*m, "extractor.", ck.tensors);
    freeze(*m);
    return m;
}

std::string checkpoint_version(const Checkpoint& ck) {
    std::string all;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("optim.", 0) == 0 || name.rfind("train.", 0) == 0) continue;
        auto f = t.detach().to(torch::kFloat).contiguous();
        all += name;
        all.append(reinterpret_cast<const char*>(f.data_ptr<float>()), static_cast<size_t>(f.numel()) * 4);
    }
    return sha256_hex(all).substr(0, 12);
}

}  // namespace wurstkit
