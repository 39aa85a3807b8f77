#include "wurstkit/config.hpp"

#include "wurstkit/checkpoint.hpp"
#include "wurstkit/errors.hpp"

#include <set>

namespace wurstkit {

namespace {

// Reads known keys out of one JSON object and rejects the rest.
class Reader {
public:
    Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw FormatError(where() + " must be a JSON object");
    }

    template <typename T>
    void operator()(const char* key, T& dst) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            j_.at(key).get_to(dst);
        } catch (const nlohmann::json::exception&) {
            throw FormatError(where() + "." + key + " has the wrong type");
        }
    }

    template <typename F>
    void section(const char* key, F&& visit) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Reader sub(j_.at(key), path_ + "." + key);
        visit(sub);
        sub.finish();
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw FormatError("unknown config key " + where() + "." + k);
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

class Writer {
public:
    template <typename T>
    void operator()(const char* key, const T& v) {
        out[key] = v;
    }
    template <typename F>
    void section(const char* key, F&& visit) {
        Writer sub;
        visit(sub);
        out[key] = std::move(sub.out);
    }
    nlohmann::json out = nlohmann::json::object();
};

template <typename V>
void visit_optim(V& v, AdamWConfig& c) {
    v("lr", c.lr);
    v("beta1", c.beta1);
    v("beta2", c.beta2);
    v("eps", c.eps);
    v("weight_decay", c.weight_decay);
    v("warmup_steps", c.warmup_steps);
}

template <typename V>
void visit_schedule(V& v, StageSchedule& s) {
    v("steps", s.steps);
    v("batch_size", s.batch_size);
    v("checkpoint_every", s.checkpoint_every);
    v.section("optimizer", [&](auto& o) { visit_optim(o, s.optim); });
}

template <typename V>
void visit_all(V& v, RunConfig& c) {
    v("schema_version", c.schema_version);
    v.section("shapes", [&](auto& s) { s("image_size", c.shapes.image_size); });
    v.section("schedule", [&](auto& s) {
        s("offset", c.schedule.offset);
        s("floor", c.schedule.floor);
        s("min_train_t", c.schedule.min_train_t);
    });
    v.section("stage_a", [&](auto& s) {
        auto& a = c.stage_a;
        s("width", a.width);
        s("expansion", a.expansion);
        s("encoder_blocks", a.encoder_blocks);
        s("decoder_blocks", a.decoder_blocks);
        s("codebook_size", a.codebook_size);
        s("commitment", a.commitment);
        s("quantization_drop", a.quantization_drop);
        s("mse_weight", a.mse_weight);
        s("perceptual_weight", a.perceptual_weight);
        s("adversarial_weight", a.adversarial_weight);
        s("adversarial_start", a.adversarial_start);
        s("revive_every", a.revive_every);
        s("discriminator_width", a.discriminator_width);
        s("perceptual_seed", a.perceptual_seed);
    });
    v.section("compressor", [&](auto& s) {
        auto& k = c.compressor;
        s("input_size", k.input_size);
        s("width", k.width);
        s("depth", k.depth);
        s("backbone_channels", k.backbone_channels);
        s("mean", k.mean);
        s("std", k.std);
    });
    v.section("text", [&](auto& s) {
        s("vocab_size", c.text.vocab_size);
        s("max_tokens", c.text.max_tokens);
        s("dim", c.text.dim);
    });
    v.section("stage_b", [&](auto& s) {
        auto& b = c.stage_b;
        s("widths", b.widths);
        s("blocks", b.blocks);
        s("heads", b.heads);
        s("expansion", b.expansion);
        s("time_dim", b.time_dim);
        s("cond_dim", b.cond_dim);
        s("use_semantic", b.use_semantic);
        s("use_text", b.use_text);
        s("augment_probability", b.augment_probability);
        s("augment_max_t", b.augment_max_t);
        s("semantic_dropout", b.semantic_dropout);
        s("text_dropout", b.text_dropout);
    });
    v.section("stage_c", [&](auto& s) {
        auto& p = c.stage_c;
        s("blocks", p.blocks);
        s("width", p.width);
        s("heads", p.heads);
        s("expansion", p.expansion);
        s("time_dim", p.time_dim);
        s("cond_dim", p.cond_dim);
        s("text_dropout", p.text_dropout);
        s.section("probe", [&](auto& q) {
            q("stages", c.probe.stages);
            q("start_channels", c.probe.start_channels);
        });
    });
    v.section("sampler", [&](auto& s) {
        auto& p = c.sampler;
        s("steps_c", p.steps_c);
        s("steps_b", p.steps_b);
        s("guidance_c", p.guidance_c);
        s("guidance_b", p.guidance_b);
        s("seed", p.seed);
        s("rescale_init", p.rescale_init);
    });
    v.section("train", [&](auto& s) {
        auto& t = c.train;
        s("seed", t.seed);
        s("dataset", t.dataset);
        s.section("synth", [&](auto& q) {
            q("shapes", t.synth.shapes);
            q("colors", t.synth.colors);
            q("sizes", t.synth.sizes);
            q("backgrounds", t.synth.backgrounds);
            q("count", t.synth.count);
            q("image_size", t.synth.image_size);
            q("short_caption_rate", t.synth.short_caption_rate);
        });
        s.section("stage_a", [&](auto& q) { visit_schedule(q, t.stage_a); });
        s.section("stage_b", [&](auto& q) { visit_schedule(q, t.stage_b); });
        s.section("stage_c", [&](auto& q) { visit_schedule(q, t.stage_c); });
        s.section("baseline", [&](auto& q) { visit_schedule(q, t.baseline); });
        s.section("probe", [&](auto& q) { visit_schedule(q, t.probe); });
        s.section("extractor", [&](auto& q) { visit_schedule(q, t.extractor); });
    });
    v.section("eval", [&](auto& s) {
        auto& e = c.eval;
        s.section("extractor", [&](auto& q) {
            q("input_size", e.extractor.input_size);
            q("width", e.extractor.width);
            q("feature_dim", e.extractor.feature_dim);
            q("corpus_seed", e.extractor.corpus_seed);
            q("corpus_count", e.extractor.corpus_count);
            q("jitter", e.extractor.jitter);
        });
        s("jpeg_qualities", e.jpeg_qualities);
        s("brightness_percent", e.brightness_percent);
        s("contrast_percent", e.contrast_percent);
        s("fid_samples", e.fid_samples);
        s("batch_size", e.batch_size);
        s("bench_batches", e.bench_batches);
    });
}

}  // namespace

void SamplerConfig::validate() const {
    if (steps_c < 1 || steps_b < 1) throw DomainError("sampler step counts must be >= 1");
    if (!(guidance_c >= 0.0) || !(guidance_b >= 0.0)) throw DomainError("guidance scales must be >= 0");
}

void RunConfig::resolve() {
    if (schema_version != kRunConfigSchema)
        throw FormatError("config schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                          std::to_string(kRunConfigSchema) + ")");
    if (shapes.image_size < 4 || shapes.image_size % 4 != 0) throw ShapeError("shapes.image_size must be a multiple of 4");
    compressor.validate();
    stage_b.text = text;
    stage_c.text = text;
    stage_b.semantic_size = compressor.latent_size();
    stage_b.validate();
    stage_c.validate();
    sampler.validate();
    const int64_t down = int64_t{1} << (stage_b.widths.size() - 1);
    if ((shapes.image_size / 4) % down != 0) throw ShapeError("Stage A latent size is not divisible by the Stage B depth");
}

StageBConfig RunConfig::baseline_config() const {
    StageBConfig b = stage_b;
    b.use_semantic = false;
    b.use_text = true;
    return b;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    Reader r(j, "");
    visit_all(r, cfg);
    r.finish();
    cfg.resolve();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const auto text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json to_json(const RunConfig& cfg) {
    Writer w;
    visit_all(w, const_cast<RunConfig&>(cfg));
    return w.out;
}

}  // namespace wurstkit
