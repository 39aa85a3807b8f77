#include "cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"
#include "wurstkit/checkpoint.hpp"
#include "wurstkit/config.hpp"
#include "wurstkit/dataset.hpp"
#include "wurstkit/errors.hpp"
#include "wurstkit/evalkit.hpp"
#include "wurstkit/image_io.hpp"
#include "wurstkit/models.hpp"
#include "wurstkit/pipeline.hpp"
#include "wurstkit/train.hpp"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace wurstkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_checkpoint_dir() {
    if (const char* env = std::getenv("WURSTKIT_CACHE"); env && *env) return env;
    return "checkpoints";
}

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n > 0 ? static_cast<int>(n) : 1;
}

// Flags every subcommand accepts.
struct Common {
    std::string config;
    std::string checkpoints = default_checkpoint_dir();
    uint64_t seed = 0;
    int threads = default_threads();
    CLI::Option* seed_opt = nullptr;

    bool seed_given() const { return seed_opt && seed_opt->count() > 0; }
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Run config JSON; flags override its values");
    app->add_option("--checkpoints", c.checkpoints, "Checkpoint directory (env WURSTKIT_CACHE)")
        ->default_str("$WURSTKIT_CACHE or ./checkpoints");
    c.seed_opt = app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    app->add_option("--threads", c.threads, "Intra-op worker threads")
        ->check(CLI::PositiveNumber)
        ->default_str("available parallelism");
}

RunConfig load_config(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_run_config(c.config);
    cfg.resolve();
    return cfg;
}

void apply_threads(const Common& c) {
    torch::set_num_threads(c.threads);
    Eigen::setNbThreads(c.threads);
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const DomainError*>(&e)) return "domain";
    if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
    if (dynamic_cast<const FormatError*>(&e)) return "format";
    if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
    return "runtime";
}

void error_line(std::ostream& err, const std::string& kind, const std::string& message) {
    err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

// Directory of images (folder ingestion) or a JSON-lines manifest.
LoadedDataset load_image_set(const std::string& path, int64_t image_size) {
    if (!fs::exists(path)) throw PreconditionError("image set not found: " + path);
    const auto manifest = fs::is_directory(path) ? ingest_image_folder(path) : load_manifest(path);
    if (manifest.records.empty()) throw PreconditionError("image set is empty: " + path);
    return load_dataset(manifest, image_size);
}

Checkpoint load_required(const fs::path& dir, Stage s) {
    const auto path = checkpoint_path(dir, s);
    if (!fs::exists(path)) throw PreconditionError(stage_name(s) + " checkpoint missing: " + path.string());
    return load_checkpoint(path);
}

fs::path numbered(const fs::path& base, size_t i, size_t n) {
    if (n == 1) return base;
    auto p = base;
    p.replace_filename(base.stem().string() + "_" + std::to_string(i) + base.extension().string());
    return p;
}

std::string shape_text(const torch::Tensor& t) {
    std::string s = "[";
    for (int64_t d = 0; d < t.dim(); ++d) s += (d ? ", " : "") + std::to_string(t.size(d));
    return s + "]";
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string stage;
    int64_t steps = 0;
    int64_t batch_size = 0;
    double lr = 0.0;
    bool resume = false;
    int64_t stop_at = -1;
    std::string loss_csv;
    std::string dataset;
    int64_t log_every = 50;
    CLI::Option *steps_opt = nullptr, *batch_opt = nullptr, *lr_opt = nullptr;
};

void setup_train(CLI::App& root, TrainArgs& a) {
    auto* app = root.add_subcommand("train", "Train one stage (A before B before C)");
    app->add_option("stage", a.stage, "stage-a | stage-b | stage-c | baseline | probe | extractor")
        ->required()
        ->check(CLI::IsMember({"stage-a", "stage-b", "stage-c", "baseline", "probe", "extractor"}));
    add_common(app, a.common);
    a.steps_opt = app->add_option("--steps", a.steps, "Override the configured step count")
                      ->check(CLI::PositiveNumber)
                      ->default_str("from config");
    a.batch_opt = app->add_option("--batch-size", a.batch_size, "Override the configured batch size")
                      ->check(CLI::PositiveNumber)
                      ->default_str("from config");
    a.lr_opt = app->add_option("--lr", a.lr, "Override the peak learning rate")
                   ->check(CLI::PositiveNumber)
                   ->default_str("from config");
    app->add_flag("--resume", a.resume, "Continue from an existing checkpoint of this stage");
    app->add_option("--stop-at", a.stop_at, "Stop after this many completed steps (-1: run to the end)")
        ->capture_default_str();
    app->add_option("--loss-csv", a.loss_csv, "Loss curve path")->default_str("<checkpoints>/<stage>_loss.csv");
    app->add_option("--dataset", a.dataset, "JSON-lines manifest or image folder")->default_str("synthetic corpus");
    app->add_option("--log-every", a.log_every, "Progress line interval in steps (0 disables)")
        ->capture_default_str();
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    apply_threads(a.common);
    auto cfg = load_config(a.common);
    const Stage stage = parse_stage(a.stage);
    if (a.common.seed_given()) cfg.train.seed = a.common.seed;
    StageSchedule* sched = nullptr;
    switch (stage) {
        case Stage::a: sched = &cfg.train.stage_a; break;
        case Stage::b: sched = &cfg.train.stage_b; break;
        case Stage::c: sched = &cfg.train.stage_c; break;
        case Stage::baseline: sched = &cfg.train.baseline; break;
        case Stage::probe: sched = &cfg.train.probe; break;
        case Stage::extractor: sched = &cfg.train.extractor; break;
    }
    if (a.steps_opt->count()) sched->steps = a.steps;
    if (a.batch_opt->count()) sched->batch_size = a.batch_size;
    if (a.lr_opt->count()) sched->optim.lr = a.lr;
    cfg.resolve();

    TrainOptions opts;
    opts.checkpoint_dir = a.common.checkpoints;
    opts.resume = a.resume;
    opts.stop_at = a.stop_at;
    opts.loss_csv = a.loss_csv;
    std::optional<LoadedDataset> data;
    if (!a.dataset.empty()) {
        data = load_image_set(a.dataset, cfg.shapes.image_size);
        opts.dataset = &*data;
    }
    if (a.log_every > 0) {
        opts.progress = [&](int64_t step, int64_t total, const LossTerms& terms) {
            if ((step + 1) % a.log_every != 0 && step + 1 != total) return;
            err << stage_name(stage) << " step " << step + 1 << "/" << total;
            for (const auto& [k, v] : terms) err << " " << k << "=" << v;
            err << "\n";
        };
    }
    run_training(stage, cfg, opts);
    out << checkpoint_path(opts.checkpoint_dir, stage).string() << "\n";
    out << (a.loss_csv.empty() ? (opts.checkpoint_dir / (stage_name(stage) + "_loss.csv")).string() : a.loss_csv)
        << "\n";
    return 0;
}

// ---- sample ---------------------------------------------------------------

struct SamplerFlags {
    SamplerConfig values;
    bool no_rescale = false;
    CLI::Option *steps_c = nullptr, *steps_b = nullptr, *guidance_c = nullptr, *guidance_b = nullptr;

    void add(CLI::App* app, bool with_stage_b) {
        steps_c = app->add_option("--steps-c", values.steps_c, "Stage C sampling steps")
                      ->check(CLI::PositiveNumber)
                      ->capture_default_str();
        guidance_c = app->add_option("--guidance-c", values.guidance_c, "Stage C guidance scale")
                         ->check(CLI::NonNegativeNumber)
                         ->capture_default_str();
        if (!with_stage_b) return;
        steps_b = app->add_option("--steps-b", values.steps_b, "Stage B sampling steps")
                      ->check(CLI::PositiveNumber)
                      ->capture_default_str();
        guidance_b = app->add_option("--guidance-b", values.guidance_b, "Stage B guidance scale")
                         ->check(CLI::NonNegativeNumber)
                         ->capture_default_str();
        app->add_flag("--no-rescale-init", no_rescale, "Keep the codebook-token init at its raw scale");
    }

    SamplerConfig resolve(SamplerConfig base, const Common& c) const {
        if (steps_c && steps_c->count()) base.steps_c = values.steps_c;
        if (steps_b && steps_b->count()) base.steps_b = values.steps_b;
        if (guidance_c && guidance_c->count()) base.guidance_c = values.guidance_c;
        if (guidance_b && guidance_b->count()) base.guidance_b = values.guidance_b;
        if (no_rescale) base.rescale_init = false;
        if (c.seed_given()) base.seed = c.seed;
        base.validate();
        return base;
    }
};

struct SampleArgs {
    Common common;
    SamplerFlags sampler;
    std::string prompt;
    int64_t count = 1;
    std::string out = "sample.png";
    std::string record;
    std::string save_semantic;
};

void setup_sample(CLI::App& root, SampleArgs& a) {
    auto* app = root.add_subcommand("sample", "Generate images from a text prompt");
    app->add_option("--prompt", a.prompt, "Caption to condition on")->required();
    add_common(app, a.common);
    a.sampler.add(app, true);
    app->add_option("--count", a.count, "Images to generate; sample i uses seed + i")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--out", a.out, "Output PNG; with --count > 1 an _<i> suffix is added")->capture_default_str();
    app->add_option("--record", a.record, "Generation record JSON")->default_str("<out stem>.json");
    app->add_option("--save-semantic", a.save_semantic, "Also write the Stage C latents (checkpoint format)");
}

void save_semantic(const fs::path& path, const torch::Tensor& semantic, const std::vector<std::string>& prompts,
                   const std::vector<uint64_t>& seeds) {
    Checkpoint ck;
    ck.tensors["semantic"] = semantic.contiguous();
    ck.manifest = {{"stage", "semantic_latent"}, {"prompts", prompts}, {"seeds", seeds}};
    save_checkpoint(ck, path);
}

int run_sample(const SampleArgs& a, std::ostream& out, std::ostream& err) {
    apply_threads(a.common);
    const auto cfg = load_config(a.common);
    const auto sampler = a.sampler.resolve(cfg.sampler, a.common);
    auto pipeline = Pipeline::load(a.common.checkpoints);
    const auto n = static_cast<size_t>(a.count);
    std::vector<std::string> prompts(n, a.prompt);
    std::vector<uint64_t> seeds;
    for (size_t i = 0; i < n; ++i) seeds.push_back(sampler.seed + i);
    err << "sampling " << n << " image(s), " << sampler.steps_c << "+" << sampler.steps_b << " steps\n";
    auto g = pipeline.generate(prompts, seeds, sampler);

    const fs::path base(a.out);
    auto records = json::array();
    for (size_t i = 0; i < n; ++i) {
        const auto path = numbered(base, i, n);
        write_png(path, g.images[static_cast<int64_t>(i)]);
        auto rec = generation_record(prompts[i], seeds[i], sampler, g);
        rec["image"] = path.string();
        records.push_back(rec);
        out << path.string() << "\n";
    }
    fs::path record_path = a.record;
    if (record_path.empty()) record_path = fs::path(base).replace_extension(".json");
    write_file_atomic(record_path, (n == 1 ? records[0] : records).dump(2) + "\n");
    out << record_path.string() << "\n";
    if (!a.save_semantic.empty()) {
        save_semantic(a.save_semantic, g.semantic, prompts, seeds);
        out << a.save_semantic << "\n";
    }
    return 0;
}

// ---- merge ----------------------------------------------------------------

struct MergeArgs {
    Common common;
    std::string a, b, out;
    double lambda = 0.5;
};

void setup_merge(CLI::App& root, MergeArgs& m) {
    auto* app = root.add_subcommand("merge", "Interpolate two checkpoints: (1 - lambda) * a + lambda * b");
    app->add_option("--a", m.a, "First checkpoint")->required();
    app->add_option("--b", m.b, "Second checkpoint")->required();
    app->add_option("--lambda", m.lambda, "Interpolation weight in [0,1]")->capture_default_str();
    app->add_option("--out", m.out, "Merged checkpoint path")->required();
    add_common(app, m.common);
}

int run_merge(const MergeArgs& m, std::ostream& out, std::ostream&) {
    apply_threads(m.common);
    auto merged = interpolate_weights(load_checkpoint(m.a), load_checkpoint(m.b), m.lambda);
    merged.manifest["provenance"]["a_path"] = m.a;
    merged.manifest["provenance"]["b_path"] = m.b;
    save_checkpoint(merged, m.out);
    out << m.out << "\n";
    return 0;
}

// ---- probe-decode -----------------------------------------------------------

struct ProbeArgs {
    Common common;
    SamplerFlags sampler;
    std::string latent, prompt;
    std::string out = "probe.png";
};

void setup_probe(CLI::App& root, ProbeArgs& a) {
    auto* app = root.add_subcommand("probe-decode", "Decode Stage C latents to pixels with the probe decoder");
    auto* latent = app->add_option("--latent", a.latent, "Semantic latent file written by sample --save-semantic");
    auto* prompt = app->add_option("--prompt", a.prompt, "Sample the latent from this caption first");
    latent->excludes(prompt);
    prompt->excludes(latent);
    add_common(app, a.common);
    a.sampler.add(app, false);
    app->add_option("--out", a.out, "Output PNG; several latents get an _<i> suffix")->capture_default_str();
}

int run_probe(const ProbeArgs& a, std::ostream& out, std::ostream&) {
    if (a.latent.empty() == a.prompt.empty()) throw PreconditionError("probe-decode needs exactly one of --latent or --prompt");
    apply_threads(a.common);
    const auto cfg = load_config(a.common);
    auto probe = load_probe(load_required(a.common.checkpoints, Stage::probe));
    torch::Tensor semantic;
    if (!a.latent.empty()) {
        semantic = load_checkpoint(a.latent).at("semantic");
    } else {
        const auto sampler = a.sampler.resolve(cfg.sampler, a.common);
        auto pipeline = Pipeline::load(a.common.checkpoints);
        semantic = pipeline.sample_stage_c({a.prompt}, {sampler.seed}, sampler);
    }
    torch::NoGradGuard guard;
    auto images = probe->decode(semantic);
    const auto n = static_cast<size_t>(images.size(0));
    for (size_t i = 0; i < n; ++i) {
        const auto path = numbered(a.out, i, n);
        write_png(path, images[static_cast<int64_t>(i)]);
        out << path.string() << "\n";
    }
    return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string set_a, set_b, set, corpus;
    std::vector<std::string> specs;
    std::string out_json, out_csv;
};

FeatureExtractor extractor_for(const Common& c, std::string* version) {
    auto ck = load_required(c.checkpoints, Stage::extractor);
    if (version) *version = checkpoint_version(ck);
    return load_extractor(ck);
}

void emit_json(const json& j, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << j.dump() << "\n";
        return;
    }
    write_file_atomic(path, j.dump(2) + "\n");
    out << path << "\n";
}

int run_eval_fid(const EvalArgs& a, std::ostream& out, std::ostream&) {
    apply_threads(a.common);
    const auto cfg = load_config(a.common);
    std::string version;
    auto ex = extractor_for(a.common, &version);
    const auto sa = load_image_set(a.set_a, cfg.shapes.image_size);
    const auto sb = load_image_set(a.set_b, cfg.shapes.image_size);
    const auto stats_a = extract_stats(ex, sa.images);
    const auto stats_b = extract_stats(ex, sb.images);
    emit_json({{"fid", fid(stats_a, stats_b)},
               {"n_a", stats_a.count},
               {"n_b", stats_b.count},
               {"extractor_version", version}},
              a.out_json, out);
    return 0;
}

int run_eval_audit(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    apply_threads(a.common);
    auto cfg = load_config(a.common);
    if (a.common.seed_given()) cfg.train.seed = a.common.seed;
    std::string version;
    auto ex = extractor_for(a.common, &version);
    const auto corpus = a.corpus.empty() ? training_corpus(cfg) : load_image_set(a.corpus, cfg.shapes.image_size);
    std::vector<Manipulation> specs;
    for (const auto& s : a.specs) specs.push_back(Manipulation::parse(s));
    if (specs.empty()) specs = default_audit_specs(cfg.eval);
    err << "fid-audit over " << corpus.size() << " images, " << specs.size() << " manipulations\n";
    const auto report = fid_audit(ex, corpus.images, specs, version, cfg.eval.batch_size);
    if (a.out_csv.empty() && a.out_json.empty()) {
        out << report.to_csv();
        return 0;
    }
    if (!a.out_csv.empty()) {
        write_file_atomic(a.out_csv, report.to_csv());
        out << a.out_csv << "\n";
    }
    if (!a.out_json.empty()) {
        write_file_atomic(a.out_json, report.to_json().dump(2) + "\n");
        out << a.out_json << "\n";
    }
    return 0;
}

int run_eval_is(const EvalArgs& a, std::ostream& out, std::ostream&) {
    apply_threads(a.common);
    const auto cfg = load_config(a.common);
    std::string version;
    auto ex = extractor_for(a.common, &version);
    const auto set = load_image_set(a.set, cfg.shapes.image_size);
    auto probs = class_probabilities(ex, set.images).to(torch::kDouble).contiguous();
    Eigen::MatrixXd m(probs.size(0), probs.size(1));
    auto acc = probs.accessor<double, 2>();
    for (int64_t i = 0; i < m.rows(); ++i)
        for (int64_t j = 0; j < m.cols(); ++j) m(i, j) = acc[i][j];
    emit_json({{"inception_score", inception_score(m)},
               {"n", m.rows()},
               {"classes", m.cols()},
               {"extractor_version", version}},
              a.out_json, out);
    return 0;
}

void setup_eval(CLI::App& root, EvalArgs& fid_a, EvalArgs& audit_a, EvalArgs& is_a, CLI::App*& fid_app,
                CLI::App*& audit_app, CLI::App*& is_app) {
    auto* app = root.add_subcommand("eval", "FID, FID robustness audit and Inception Score");
    app->require_subcommand(1);

    fid_app = app->add_subcommand("fid", "FID between two image sets");
    fid_app->add_option("--set-a", fid_a.set_a, "Image folder or JSON-lines manifest")->required();
    fid_app->add_option("--set-b", fid_a.set_b, "Image folder or JSON-lines manifest")->required();
    fid_app->add_option("--out", fid_a.out_json, "Write the JSON result here instead of stdout");
    add_common(fid_app, fid_a.common);

    audit_app = app->add_subcommand("fid-audit", "FID of manipulated copies of a corpus against the original");
    audit_app->add_option("--corpus", audit_a.corpus, "Image folder or JSON-lines manifest")
        ->default_str("synthetic training corpus");
    audit_app->add_option("--spec", audit_a.specs, "Manipulation, e.g. jpeg:70, resample:nearest, palette:256, brightness:+10")
        ->default_str("jpeg 95..50, resample nearest/bilinear, palette:256, brightness/contrast +-10");
    audit_app->add_option("--out-csv", audit_a.out_csv, "CSV report (spec,fid,n,extractor_version)");
    audit_app->add_option("--out-json", audit_a.out_json, "JSON report");
    add_common(audit_app, audit_a.common);

    is_app = app->add_subcommand("is", "Inception Score of an image set under the extractor");
    is_app->add_option("--set", is_a.set, "Image folder or JSON-lines manifest")->required();
    is_app->add_option("--out", is_a.out_json, "Write the JSON result here instead of stdout");
    add_common(is_app, is_a.common);
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
    Common common;
    SamplerFlags sampler;
    std::vector<int64_t> batches;
    std::string prompt = "red circle";
    std::string out_json, out_csv;
};

void setup_bench(CLI::App& root, BenchArgs& a, CLI::App*& latency) {
    auto* app = root.add_subcommand("bench", "Inference benchmarks");
    app->require_subcommand(1);
    latency = app->add_subcommand("latency", "Wall time and denoiser passes per stage and batch size");
    latency->add_option("--batch", a.batches, "Batch sizes")->default_str("eval.bench_batches (1 4)");
    latency->add_option("--prompt", a.prompt, "Caption used for every sample")->capture_default_str();
    latency->add_option("--out-json", a.out_json, "JSON report");
    latency->add_option("--out-csv", a.out_csv, "CSV report");
    add_common(latency, a.common);
    a.sampler.add(latency, true);
}

int run_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
    apply_threads(a.common);
    const auto cfg = load_config(a.common);
    const auto sampler = a.sampler.resolve(cfg.sampler, a.common);
    auto pipeline = Pipeline::load(a.common.checkpoints);
    const auto batches = a.batches.empty() ? cfg.eval.bench_batches : a.batches;
    err << "benchmarking " << batches.size() << " batch size(s)\n";
    const auto report = latency_bench(pipeline, batches, sampler, a.prompt);
    if (a.out_csv.empty() && a.out_json.empty()) {
        out << report.to_csv();
        return 0;
    }
    if (!a.out_csv.empty()) {
        write_file_atomic(a.out_csv, report.to_csv());
        out << a.out_csv << "\n";
    }
    if (!a.out_json.empty()) {
        write_file_atomic(a.out_json, report.to_json().dump(2) + "\n");
        out << a.out_json << "\n";
    }
    return 0;
}

// ---- dataset ----------------------------------------------------------------

struct DatasetArgs {
    Common common;
    std::string spec;
    int64_t count = 0;
    std::string out = "synth";
    bool render = false;
    CLI::Option* count_opt = nullptr;
};

void setup_dataset(CLI::App& root, DatasetArgs& a, CLI::App*& synth) {
    auto* app = root.add_subcommand("dataset", "Corpus tools");
    app->require_subcommand(1);
    synth = app->add_subcommand("synth", "Write a procedural shapes corpus manifest");
    synth->add_option("--spec", a.spec, "SynthSpec JSON")->default_str("train.synth from config");
    a.count_opt =
        synth->add_option("--count", a.count, "Override the record count")->check(CLI::PositiveNumber)->default_str("from spec");
    synth->add_option("--out", a.out, "Output directory")->capture_default_str();
    synth->add_flag("--render", a.render, "Also write PNGs with sibling caption files under <out>/images");
    add_common(synth, a.common);
}

int run_dataset(const DatasetArgs& a, std::ostream& out, std::ostream& err) {
    apply_threads(a.common);
    auto cfg = load_config(a.common);
    SynthSpec spec = cfg.train.synth;
    if (!a.spec.empty()) {
        try {
            spec = json::parse(read_file(a.spec)).get<SynthSpec>();
        } catch (const json::exception& e) {
            throw FormatError(a.spec + ": " + e.what());
        }
    }
    if (a.count_opt->count()) spec.count = a.count;
    const uint64_t seed = a.common.seed_given() ? a.common.seed : cfg.train.seed;
    const auto manifest = synth_dataset(spec, seed);
    const fs::path dir(a.out);
    const auto manifest_path = dir / "manifest.jsonl";
    save_manifest(manifest, manifest_path);
    out << manifest_path.string() << "\n";
    if (a.render) {
        const auto images = dir / "images";
        for (size_t i = 0; i < manifest.records.size(); ++i) {
            const auto& r = manifest.records[i];
            write_png(images / (r.key + ".png"), render_synthetic(r.generator));
            write_file_atomic(images / (r.key + ".txt"), r.caption + "\n");
            if ((i + 1) % 250 == 0) err << "rendered " << i + 1 << "/" << manifest.records.size() << "\n";
        }
        out << images.string() << "\n";
    }
    return 0;
}

// ---- inspect ----------------------------------------------------------------

struct InspectArgs {
    Common common;
    std::string checkpoint;
    bool as_json = false;
};

void setup_inspect(CLI::App& root, InspectArgs& a) {
    auto* app = root.add_subcommand("inspect", "Print a checkpoint's manifest, tensors, parameter counts and compression");
    app->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    app->add_flag("--json", a.as_json, "Emit one JSON document");
    add_common(app, a.common);
}

int run_inspect(const InspectArgs& a, std::ostream& out, std::ostream&) {
    const auto ck = load_checkpoint(a.checkpoint);
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    auto tensors = json::array();
    for (const auto& [name, t] : ck.tensors) {
        tensors.push_back({{"name", name}, {"shape", t.sizes().vec()}});
        if (name.rfind("optim.", 0) == 0 || name.rfind("train.", 0) == 0) continue;
        counts[name.substr(0, name.find('.'))] += t.numel();
        total += t.numel();
    }
    json ratios = json::array();
    std::vector<CompressionRatio> report;
    if (ck.manifest.contains("config")) {
        const auto cfg = checkpoint_config(ck);
        const int64_t s = cfg.shapes.image_size;
        report = compression_report(s, s / 4, cfg.compressor.latent_size());
        for (const auto& r : report)
            ratios.push_back({{"name", r.name}, {"from", r.from}, {"to", r.to}, {"ratio", r.text()}});
    }
    if (a.as_json) {
        json counts_j = counts;
        out << json{{"manifest", ck.manifest},
                    {"tensors", tensors},
                    {"parameters", {{"by_prefix", counts_j}, {"total", total}}},
                    {"compression", ratios},
                    {"version", checkpoint_version(ck)}}
                   .dump(2)
            << "\n";
        return 0;
    }
    auto manifest = ck.manifest;
    manifest.erase("config");
    out << "checkpoint: " << a.checkpoint << "\n";
    out << "version: " << checkpoint_version(ck) << "\n";
    out << "manifest: " << manifest.dump() << "\n";
    out << "tensors:\n";
    for (const auto& [name, t] : ck.tensors) out << "  " << name << " " << shape_text(t) << "\n";
    out << "parameters:\n";
    for (const auto& [prefix, n] : counts) out << "  " << prefix << " " << n << "\n";
    out << "  total " << total << "\n";
    if (!report.empty()) {
        out << "compression:\n";
        for (const auto& r : report) out << "  " << r.name << " " << r.from << " -> " << r.to << "  " << r.text() << "\n";
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App root{"Three-stage text-to-image latent diffusion toolkit", "wurstkit"};
    root.require_subcommand(1);
    root.get_formatter()->column_width(34);

    TrainArgs train;
    SampleArgs sample;
    MergeArgs merge;
    ProbeArgs probe;
    EvalArgs eval_fid, eval_audit, eval_is;
    BenchArgs bench;
    DatasetArgs dataset;
    InspectArgs inspect;
    CLI::App *fid_app = nullptr, *audit_app = nullptr, *is_app = nullptr, *latency_app = nullptr, *synth_app = nullptr;

    setup_train(root, train);
    setup_sample(root, sample);
    setup_merge(root, merge);
    setup_probe(root, probe);
    setup_eval(root, eval_fid, eval_audit, eval_is, fid_app, audit_app, is_app);
    setup_bench(root, bench, latency_app);
    setup_dataset(root, dataset, synth_app);
    setup_inspect(root, inspect);

    try {
        root.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        // Help for the deepest subcommand that was named.
        const CLI::App* target = &root;
        while (true) {
            auto subs = target->get_subcommands();
            if (subs.empty()) break;
            target = subs.front();
        }
        out << target->help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << root.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        error_line(err, "usage", e.what());
        return 2;
    }

    try {
        if (root.got_subcommand("train")) return run_train(train, out, err);
        if (root.got_subcommand("sample")) return run_sample(sample, out, err);
        if (root.got_subcommand("merge")) return run_merge(merge, out, err);
        if (root.got_subcommand("probe-decode")) return run_probe(probe, out, err);
        if (fid_app->parsed()) return run_eval_fid(eval_fid, out, err);
        if (audit_app->parsed()) return run_eval_audit(eval_audit, out, err);
        if (is_app->parsed()) return run_eval_is(eval_is, out, err);
        if (latency_app->parsed()) return run_bench(bench, out, err);
        if (synth_app->parsed()) return run_dataset(dataset, out, err);
        if (root.got_subcommand("inspect")) return run_inspect(inspect, out, err);
    } catch (const std::exception& e) {
        error_line(err, error_kind(e), e.what());
        return 1;
    }
    error_line(err, "usage", "no subcommand");
    return 2;
}

}  // namespace wurstkit::cli
