#include "wurstkit/train.hpp"

#include "wurstkit/diffusion.hpp"
#include "wurstkit/errors.hpp"
#include "wurstkit/evalkit.hpp"
#include "wurstkit/optim.hpp"
#include "wurstkit/resize.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <memory>
#include <sstream>

namespace wurstkit {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

uint64_t step_seed(uint64_t seed, int64_t step) { return splitmix64(seed ^ splitmix64(static_cast<uint64_t>(step))); }

const StageSchedule& stage_schedule(const RunConfig& cfg, Stage s) {
    switch (s) {
        case Stage::a: return cfg.train.stage_a;
        case Stage::b: return cfg.train.stage_b;
        case Stage::c: return cfg.train.stage_c;
        case Stage::baseline: return cfg.train.baseline;
        case Stage::probe: return cfg.train.probe;
        case Stage::extractor: return cfg.train.extractor;
    }
    throw DomainError("unknown stage");
}

LoadedDataset training_corpus(const RunConfig& cfg) {
    const auto manifest = cfg.train.dataset.empty() ? synth_dataset(cfg.train.synth, cfg.train.seed)
                                                    : load_manifest(cfg.train.dataset);
    return load_dataset(manifest, cfg.shapes.image_size);
}

namespace {

using TensorMap = std::map<std::string, torch::Tensor>;

struct StepContext {
    int64_t step;
    double lr;
    std::mt19937_64& rng;
    torch::Generator& gen;
    const std::vector<int64_t>& indices;
};

class Trainer {
public:
    virtual ~Trainer() = default;
    virtual int64_t size() const = 0;
    virtual LossTerms step(const StepContext& ctx) = 0;
    virtual void save(TensorMap& out) const = 0;
    virtual void load(const TensorMap& in) = 0;
    virtual nlohmann::json extra_manifest() const { return nlohmann::json::object(); }
};

torch::Tensor index_tensor(const std::vector<int64_t>& idx) { return torch::tensor(idx, torch::kLong); }

std::vector<std::string> gather(const std::vector<std::string>& v, const std::vector<int64_t>& idx) {
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[static_cast<size_t>(i)]);
    return out;
}

// Uniform t in [min_t, 1] per sample.
torch::Tensor draw_t(std::mt19937_64& rng, int64_t batch, double min_t) {
    std::uniform_real_distribution<double> u(min_t, 1.0);
    std::vector<float> t(static_cast<size_t>(batch));
    for (auto& v : t) v = static_cast<float>(u(rng));
    return torch::tensor(t);
}

Checkpoint require_upstream(const std::filesystem::path& dir, Stage s, Stage needed_by) {
    const auto path = checkpoint_path(dir, s);
    if (!std::filesystem::exists(path))
        throw PreconditionError("training " + stage_name(needed_by) + " requires a " + stage_name(s) +
                                " checkpoint at " + path.string());
    auto ck = load_checkpoint(path);
    require_stage(ck, s);
    return ck;
}

// Eval-mode batch map over a corpus without gradients.
template <typename F>
torch::Tensor map_batches(const torch::Tensor& images, int64_t batch, F&& fn) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> out;
    for (int64_t s = 0; s < images.size(0); s += batch)
        out.push_back(fn(images.slice(0, s, std::min(s + batch, images.size(0)))).contiguous());
    return torch::cat(out);
}

// ---- Stage A ---------------------------------------------------------------

class StageATrainer : public Trainer {
public:
    StageATrainer(const RunConfig& cfg, const LoadedDataset& data)
        : cfg_(cfg.stage_a),
          data_(data),
          model_(cfg.stage_a),
          disc_(cfg.stage_a.image_channels, cfg.stage_a.discriminator_width),
          perceptual_(cfg.stage_a.perceptual_seed),
          opt_g_(trainable(*model_), cfg.train.stage_a.optim),
          opt_d_(trainable(*disc_), cfg.train.stage_a.optim),
          usage_(torch::zeros({cfg.stage_a.codebook_size})) {
        freeze(*perceptual_);
    }

    int64_t size() const override { return data_.size(); }

    LossTerms step(const StepContext& c) override {
        model_->train();
        disc_->train();
        auto x = data_.images.index_select(0, index_tensor(c.indices));
        auto z = model_->encode(x);
        auto q = model_->quantize(z);
        usage_ += torch::bincount(q.indices.flatten(), {}, cfg_.codebook_size).to(torch::kFloat);
        const bool drop = maybe_drop_quantization(c.rng, cfg_.quantization_drop);
        auto latent = drop ? z : straight_through(z, q.quantized);
        auto vq = drop ? torch::Tensor() : vq_loss(z, q.quantized, cfg_.commitment);
        auto rec = model_->decode_raw(latent);
        auto br = stage_a_loss(cfg_, x, rec, perceptual_, &disc_, c.step, vq);
        opt_g_.zero_grad();
        br.total.backward();
        opt_g_.step(c.lr);

        double d_loss = 0.0;
        if (br.adversarial_weight > 0.0) {
            auto dl = discriminator_hinge_loss(disc_, x, rec.detach());
            opt_d_.zero_grad();
            dl.backward();
            opt_d_.step(c.lr);
            d_loss = dl.item<double>();
        }
        opt_d_.zero_grad();
        if (cfg_.revive_every > 0 && (c.step + 1) % cfg_.revive_every == 0) revive(z.detach(), c.rng);
        return {{"total", br.total.item<double>()}, {"mse", br.mse},       {"perceptual", br.perceptual},
                {"adversarial", br.adversarial},     {"vq", br.vq},         {"discriminator", d_loss},
                {"quantization_dropped", drop ? 1.0 : 0.0}};
    }

    void save(TensorMap& out) const override {
        export_module(*model_, "vqgan.", out);
        export_module(*disc_, "disc.", out);
        opt_g_.export_state(out, "optim.g.");
        opt_d_.export_state(out, "optim.d.");
        out["train.codebook_usage"] = usage_.clone();
    }

    void load(const TensorMap& in) override {
        import_module(*model_, "vqgan.", in);
        import_module(*disc_, "disc.", in);
        opt_g_.import_state(in, "optim.g.");
        opt_d_.import_state(in, "optim.d.");
        usage_.copy_(in.at("train.codebook_usage"));
    }

private:
    // Unused entries take random latent vectors from the current batch.
    void revive(const torch::Tensor& z, std::mt19937_64& rng) {
        torch::NoGradGuard guard;
        auto vectors = z.permute({0, 2, 3, 1}).reshape({-1, z.size(1)});
        auto dead = (usage_ == 0).nonzero().flatten();
        std::uniform_int_distribution<int64_t> pick(0, vectors.size(0) - 1);
        auto& book = model_->quantizer->codebook;
        for (int64_t i = 0; i < dead.size(0); ++i) book[dead[i].item<int64_t>()].copy_(vectors[pick(rng)]);
        usage_.zero_();
    }

    StageAConfig cfg_;
    const LoadedDataset& data_;
    VQGAN model_;
    PatchDiscriminator disc_;
    PerceptualNet perceptual_;
    AdamW opt_g_, opt_d_;
    torch::Tensor usage_;
};

// ---- Stage B / baseline -----------------------------------------------------

class StageBTrainer : public Trainer {
public:
    StageBTrainer(const RunConfig& cfg, const LoadedDataset& data, const std::filesystem::path& dir, bool baseline)
        : schedule_(cfg.schedule),
          bcfg_(baseline ? cfg.baseline_config() : cfg.stage_b),
          data_(data),
          unet_(bcfg_),
          compressor_(cfg.compressor) {
        auto a = require_upstream(dir, Stage::a, baseline ? Stage::baseline : Stage::b);
        upstream_ = {{"stage_a", checkpoint_version(a)}};
        auto vqgan = load_stage_a(a);
        latents_ = map_batches(data.images, 64, [&](const torch::Tensor& x) { return vqgan->encode(x); });
        auto params = trainable(*unet_, "unet.");
        if (bcfg_.use_semantic) {
            auto cp = trainable(*compressor_, "compressor.");
            params.insert(params.end(), cp.begin(), cp.end());
        }
        opt_ = std::make_unique<AdamW>(params, stage_schedule(cfg, baseline ? Stage::baseline : Stage::b).optim);
    }

    int64_t size() const override { return data_.size(); }

    LossTerms step(const StepContext& c) override {
        unet_->train();
        compressor_->train();
        const auto idx = index_tensor(c.indices);
        const int64_t b = idx.size(0);
        auto x0 = latents_.index_select(0, idx);

        torch::Tensor text, semantic;
        if (bcfg_.use_text) {
            text = unet_->text_encoder->encode(gather(data_.captions, c.indices));
            text = apply_null_mask(text, unet_->text_encoder->null_label, draw_drop_mask(c.rng, b, bcfg_.text_dropout));
        }
        if (bcfg_.use_semantic) {
            semantic = compressor_->compress(data_.images.index_select(0, idx));
            semantic = augment_conditioning(semantic, schedule_, bcfg_, c.rng, c.gen);
            semantic = apply_null_mask(semantic, unet_->null_semantic, draw_drop_mask(c.rng, b, bcfg_.semantic_dropout));
        }
        auto t = draw_t(c.rng, b, schedule_.min_train_t);
        auto eps = at::randn(x0.sizes(), c.gen);
        auto x_t = forward_noise(x0, schedule_.alpha_bar(t), eps);
        auto pred = unet_->forward(x_t, semantic, text, t);
        auto loss = weighted_loss(eps, ab_to_epsilon(x_t, pred), schedule_.p2_weight(t));
        opt_->zero_grad();
        loss.backward();
        opt_->step(c.lr);
        return {{"loss", loss.item<double>()}};
    }

    void save(TensorMap& out) const override {
        export_module(*unet_, "unet.", out);
        if (bcfg_.use_semantic) export_module(*compressor_, "compressor.", out);
        opt_->export_state(out, "optim.");
    }

    void load(const TensorMap& in) override {
        import_module(*unet_, "unet.", in);
        if (bcfg_.use_semantic) import_module(*compressor_, "compressor.", in);
        opt_->import_state(in, "optim.");
    }

    nlohmann::json extra_manifest() const override { return {{"upstream", upstream_}}; }

private:
    NoiseSchedule schedule_;
    StageBConfig bcfg_;
    const LoadedDataset& data_;
    StageBUNet unet_;
    SemanticCompressor compressor_;
    torch::Tensor latents_;
    std::unique_ptr<AdamW> opt_;
    nlohmann::json upstream_;
};

// Semantic latents of the whole corpus through the Stage B compressor.
torch::Tensor corpus_semantics(const Checkpoint& b, const LoadedDataset& data) {
    auto compressor = load_compressor(b);
    return map_batches(data.images, 64, [&](const torch::Tensor& x) { return compressor->compress(x); });
}

// ---- Stage C --------------------------------------------------------------

class StageCTrainer : public Trainer {
public:
    StageCTrainer(const RunConfig& cfg, const LoadedDataset& data, const std::filesystem::path& dir)
        : schedule_(cfg.schedule), ccfg_(cfg.stage_c), data_(data), prior_(cfg.stage_c) {
        auto b = require_upstream(dir, Stage::b, Stage::c);
        upstream_ = {{"stage_b", checkpoint_version(b)}};
        semantics_ = corpus_semantics(b, data);
        opt_ = std::make_unique<AdamW>(trainable(*prior_, "prior."), cfg.train.stage_c.optim);
    }

    int64_t size() const override { return data_.size(); }

    LossTerms step(const StepContext& c) override {
        prior_->train();
        const auto idx = index_tensor(c.indices);
        const int64_t b = idx.size(0);
        auto x0 = semantics_.index_select(0, idx);
        auto text = prior_->text_encoder->encode(gather(data_.captions, c.indices));
        text = apply_null_mask(text, prior_->text_encoder->null_label, draw_drop_mask(c.rng, b, ccfg_.text_dropout));
        auto t = draw_t(c.rng, b, schedule_.min_train_t);
        auto eps = at::randn(x0.sizes(), c.gen);
        auto x_t = forward_noise(x0, schedule_.alpha_bar(t), eps);
        auto loss = weighted_loss(eps, ab_to_epsilon(x_t, prior_->forward(x_t, text, t)), schedule_.p2_weight(t));
        opt_->zero_grad();
        loss.backward();
        opt_->step(c.lr);
        return {{"loss", loss.item<double>()}};
    }

    void save(TensorMap& out) const override {
        export_module(*prior_, "prior.", out);
        opt_->export_state(out, "optim.");
    }

    void load(const TensorMap& in) override {
        import_module(*prior_, "prior.", in);
        opt_->import_state(in, "optim.");
    }

    nlohmann::json extra_manifest() const override { return {{"upstream", upstream_}}; }

private:
    NoiseSchedule schedule_;
    StageCConfig ccfg_;
    const LoadedDataset& data_;
    StageCPrior prior_;
    torch::Tensor semantics_;
    std::unique_ptr<AdamW> opt_;
    nlohmann::json upstream_;
};

// ---- probe decoder -------------------------------------------------------

class ProbeTrainer : public Trainer {
public:
    ProbeTrainer(const RunConfig& cfg, const LoadedDataset& data, const std::filesystem::path& dir)
        : data_(data), probe_(cfg.probe) {
        auto b = require_upstream(dir, Stage::b, Stage::probe);
        upstream_ = {{"stage_b", checkpoint_version(b)}};
        semantics_ = corpus_semantics(b, data);
        const int64_t out = semantics_.size(2) << cfg.probe.stages;
        targets_ = map_batches(data.images, 64, [&](const torch::Tensor& x) { return resize_bicubic(x, out, out); });
        opt_ = std::make_unique<AdamW>(trainable(*probe_, "probe."), cfg.train.probe.optim);
    }

    int64_t size() const override { return data_.size(); }

    LossTerms step(const StepContext& c) override {
        probe_->train();
        const auto idx = index_tensor(c.indices);
        auto loss = torch::mse_loss(probe_->forward(semantics_.index_select(0, idx)), targets_.index_select(0, idx));
        opt_->zero_grad();
        loss.backward();
        opt_->step(c.lr);
        return {{"mse", loss.item<double>()}};
    }

    void save(TensorMap& out) const override {
        export_module(*probe_, "probe.", out);
        opt_->export_state(out, "optim.");
    }

    void load(const TensorMap& in) override {
        import_module(*probe_, "probe.", in);
        opt_->import_state(in, "optim.");
    }

    nlohmann::json extra_manifest() const override { return {{"upstream", upstream_}}; }

private:
    const LoadedDataset& data_;
    ProbeDecoder probe_;
    torch::Tensor semantics_, targets_;
    std::unique_ptr<AdamW> opt_;
    nlohmann::json upstream_;
};

// ---- FID feature extractor ------------------------------------------------

class ExtractorTrainer : public Trainer {
public:
    explicit ExtractorTrainer(const RunConfig& cfg)
        : ecfg_(cfg.eval.extractor),
          spec_(cfg.train.synth),
          extractor_(cfg.eval.extractor, static_cast<int64_t>(extractor_classes(cfg.train.synth).size())) {
        // Held-out corpus from its own seed, never the training corpus.
        auto spec = cfg.train.synth;
        spec.count = ecfg_.corpus_count;
        auto manifest = synth_dataset(spec, ecfg_.corpus_seed);
        auto data = load_dataset(manifest, cfg.shapes.image_size);
        std::vector<int64_t> labels;
        for (const auto& g : data.generators) labels.push_back(extractor_label(spec_, g));
        labels_ = torch::tensor(labels, torch::kLong);
        images_ = data.images;
        opt_ = std::make_unique<AdamW>(trainable(*extractor_, "extractor."), cfg.train.extractor.optim);
    }

    int64_t size() const override { return images_.size(0); }

    LossTerms step(const StepContext& c) override {
        extractor_->train();
        const auto idx = index_tensor(c.indices);
        const int64_t b = idx.size(0);
        auto x = images_.index_select(0, idx);
        // Photometric jitter so features track content rather than exposure.
        std::uniform_real_distribution<double> u(-ecfg_.jitter, ecfg_.jitter);
        std::vector<float> gain(static_cast<size_t>(b)), contrast(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) {
            gain[static_cast<size_t>(i)] = static_cast<float>(1.0 + u(c.rng));
            contrast[static_cast<size_t>(i)] = static_cast<float>(1.0 + u(c.rng));
        }
        auto g = torch::tensor(gain).view({b, 1, 1, 1}), k = torch::tensor(contrast).view({b, 1, 1, 1});
        x = (((x * g) - 0.5) * k + 0.5).clamp(0.0, 1.0);
        auto logits = extractor_->forward(extractor_->prepare(x));
        auto y = labels_.index_select(0, idx);
        auto loss = torch::cross_entropy_loss(logits, y);
        opt_->zero_grad();
        loss.backward();
        opt_->step(c.lr);
        const double acc = logits.argmax(1).eq(y).to(torch::kDouble).mean().item<double>();
        return {{"cross_entropy", loss.item<double>()}, {"accuracy", acc}};
    }

    void save(TensorMap& out) const override {
        export_module(*extractor_, "extractor.", out);
        opt_->export_state(out, "optim.");
    }

    void load(const TensorMap& in) override {
        import_module(*extractor_, "extractor.", in);
        opt_->import_state(in, "optim.");
    }

    nlohmann::json extra_manifest() const override { return {{"classes", extractor_classes(spec_)}}; }

private:
    ExtractorConfig ecfg_;
    SynthSpec spec_;
    FeatureExtractor extractor_;
    torch::Tensor images_, labels_;
    std::unique_ptr<AdamW> opt_;
};

std::string csv_rows(int64_t step, const LossTerms& terms, double lr) {
    std::ostringstream ss;
    ss.precision(9);
    ss << step << ",lr," << lr << '\n';
    for (const auto& [k, v] : terms) ss << step << ',' << k << ',' << v << '\n';
    return ss.str();
}

// Keeps the rows of an existing loss curve that precede `step`.
std::string truncate_csv(const std::string& text, int64_t step) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("step,", 0) == 0) continue;
        if (std::stoll(line.substr(0, line.find(','))) < step) out += line + '\n';
    }
    return out;
}

}  // namespace

TrainResult run_training(Stage stage, const RunConfig& cfg, const TrainOptions& opts) {
    const auto& sched = stage_schedule(cfg, stage);
    if (sched.steps < 1) throw DomainError("train steps must be >= 1");
    if (sched.batch_size < 1) throw DomainError("train batch size must be >= 1");
    if (opts.checkpoint_dir.empty()) throw PreconditionError("no checkpoint directory given");
    std::filesystem::create_directories(opts.checkpoint_dir);

    std::unique_ptr<LoadedDataset> owned;
    const LoadedDataset* data = opts.dataset;
    if (stage != Stage::extractor && !data) {
        owned = std::make_unique<LoadedDataset>(training_corpus(cfg));
        data = owned.get();
    }

    // Parameter init draws from the global generator; pin it to the seed and stage.
    torch::manual_seed(splitmix64(cfg.train.seed ^ (0x5EED0000ULL + static_cast<uint64_t>(stage))));
    std::unique_ptr<Trainer> trainer;
    switch (stage) {
        case Stage::a: trainer = std::make_unique<StageATrainer>(cfg, *data); break;
        case Stage::b: trainer = std::make_unique<StageBTrainer>(cfg, *data, opts.checkpoint_dir, false); break;
        case Stage::baseline: trainer = std::make_unique<StageBTrainer>(cfg, *data, opts.checkpoint_dir, true); break;
        case Stage::c: trainer = std::make_unique<StageCTrainer>(cfg, *data, opts.checkpoint_dir); break;
        case Stage::probe: trainer = std::make_unique<ProbeTrainer>(cfg, *data, opts.checkpoint_dir); break;
        case Stage::extractor: trainer = std::make_unique<ExtractorTrainer>(cfg); break;
    }

    const auto ckpt_path = checkpoint_path(opts.checkpoint_dir, stage);
    const auto csv_path =
        opts.loss_csv.empty() ? opts.checkpoint_dir / (stage_name(stage) + "_loss.csv") : opts.loss_csv;
    TrainResult result;
    std::string csv;
    if (opts.resume && std::filesystem::exists(ckpt_path)) {
        auto ck = load_checkpoint(ckpt_path);
        require_stage(ck, stage);
        trainer->load(ck.tensors);
        result.first_step = ck.step();
        if (std::filesystem::exists(csv_path)) csv = truncate_csv(read_file(csv_path), result.first_step);
    }

    const int64_t end = opts.stop_at >= 0 ? std::min(opts.stop_at, sched.steps) : sched.steps;
    auto snapshot = [&](int64_t steps_done) {
        Checkpoint ck;
        trainer->save(ck.tensors);
        ck.manifest = trainer->extra_manifest();
        ck.manifest["stage"] = stage_name(stage);
        ck.manifest["step"] = steps_done;
        ck.manifest["total_steps"] = sched.steps;
        ck.manifest["config"] = to_json(cfg);
        ck.manifest["rng"] = {{"seed", cfg.train.seed}, {"scheme", "splitmix64(seed ^ splitmix64(step))"}};
        ck.manifest["provenance"] = {{"kind", "training"}};
        save_checkpoint(ck, ckpt_path);
        write_file_atomic(csv_path, "step,term,value\n" + csv);
        return ck;
    };

    const int64_t n = trainer->size();
    for (int64_t s = result.first_step; s < end; ++s) {
        const uint64_t seed = step_seed(cfg.train.seed, s);
        std::mt19937_64 rng(seed);
        auto gen = at::make_generator<at::CPUGeneratorImpl>(splitmix64(seed));
        std::vector<int64_t> indices(static_cast<size_t>(sched.batch_size));
        std::uniform_int_distribution<int64_t> pick(0, n - 1);
        for (auto& i : indices) i = pick(rng);
        const double lr = warmup_lr(sched.optim, s);

        auto terms = trainer->step({s, lr, rng, gen, indices});
        for (const auto& [k, v] : terms)
            if (!std::isfinite(v))
                throw NumericalError(stage_name(stage) + ": non-finite " + k + " at step " + std::to_string(s));
        csv += csv_rows(s, terms, lr);
        if (opts.progress) opts.progress(s, sched.steps, terms);
        result.history.push_back(std::move(terms));

        const int64_t done = s + 1;
        if (done == end || (sched.checkpoint_every > 0 && done % sched.checkpoint_every == 0))
            result.checkpoint = snapshot(done);
    }
    if (result.history.empty()) result.checkpoint = load_checkpoint(ckpt_path);
    return result;
}

}  // namespace wurstkit
