#include "wurstkit/pipeline.hpp"

#include "wurstkit/errors.hpp"
#include "wurstkit/train.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <chrono>
#include <cstdio>
#include <numeric>

namespace wurstkit {

namespace {

constexpr uint64_t kStageCStream = 0xC0;
constexpr uint64_t kStageBStream = 0xB0;
constexpr uint64_t kTokenStream = 0xA0;

uint64_t stream_seed(uint64_t seed, uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

std::vector<torch::Generator> generators(const std::vector<uint64_t>& seeds, uint64_t stream) {
    std::vector<torch::Generator> out;
    for (auto s : seeds) out.push_back(at::make_generator<at::CPUGeneratorImpl>(stream_seed(s, stream)));
    return out;
}

torch::Tensor per_sample_noise(std::vector<torch::Generator>& gens, at::IntArrayRef shape) {
    std::vector<torch::Tensor> parts;
    for (auto& g : gens) parts.push_back(at::randn(shape, g));
    return torch::cat(parts);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_batch(const std::vector<std::string>& prompts, const std::vector<uint64_t>& seeds) {
    if (prompts.empty()) throw ShapeError("at least one prompt is required");
    if (prompts.size() != seeds.size()) throw ShapeError("one seed per prompt is required");
}

// Guided epsilon with as few network calls as the scale allows: w = 0 needs
// only the unconditional pass, w = 1 only the conditional one.
template <typename F>
torch::Tensor guided(double w, F&& eps_for, int64_t& counter) {
    if (w == 0.0) {
        ++counter;
        return eps_for(false);
    }
    if (w == 1.0) {
        ++counter;
        return eps_for(true);
    }
    auto eps_u = eps_for(false);
    auto eps_c = eps_for(true);
    counter += 2;
    return cfg_combine(eps_u, eps_c, w);
}

}  // namespace

std::string CompressionRatio::text() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld:1 (%lld/%lld = %.2f)", static_cast<long long>(floored()),
                  static_cast<long long>(num), static_cast<long long>(den), value());
    return buf;
}

std::vector<CompressionRatio> compression_report(int64_t image_size, int64_t stage_a_size, int64_t semantic_size) {
    if (image_size < 1 || stage_a_size < 1 || semantic_size < 1) throw ShapeError("compression_report: zero dimension");
    auto ratio = [](std::string name, int64_t from, int64_t to) {
        const int64_t g = std::gcd(from, to);
        return CompressionRatio{std::move(name), from, to, from / g, to / g};
    };
    return {ratio("stage_a", image_size, stage_a_size), ratio("semantic", stage_a_size, semantic_size),
            ratio("total", image_size, semantic_size)};
}

torch::Tensor init_stage_b_latents(const torch::Tensor& codebook, int64_t batch, int64_t h, int64_t w,
                                   std::mt19937_64& rng) {
    if (codebook.dim() != 2 || codebook.size(0) < 1) throw ShapeError("codebook must be [K, z] with K >= 1");
    std::uniform_int_distribution<int64_t> pick(0, codebook.size(0) - 1);
    std::vector<int64_t> idx(static_cast<size_t>(batch * h * w));
    for (auto& i : idx) i = pick(rng);
    auto rows = codebook.detach().index_select(0, torch::tensor(idx, torch::kLong));
    return rows.view({batch, h, w, codebook.size(1)}).permute({0, 3, 1, 2}).contiguous();
}

Pipeline::Pipeline(VQGAN stage_a, StageBUNet stage_b, SemanticCompressor compressor, StageCPrior stage_c,
                   NoiseSchedule schedule, int64_t image_size)
    : stage_a_(std::move(stage_a)),
      stage_b_(std::move(stage_b)),
      compressor_(std::move(compressor)),
      stage_c_(std::move(stage_c)),
      schedule_(schedule) {
    if (image_size < 4 || image_size % 4 != 0) throw ShapeError("pipeline: image size must be a multiple of 4");
    latent_size_ = image_size / 4;
    semantic_size_ = compressor_->cfg.latent_size();
}

Pipeline Pipeline::load(const std::filesystem::path& dir) {
    auto a = load_checkpoint(checkpoint_path(dir, Stage::a));
    auto b = load_checkpoint(checkpoint_path(dir, Stage::b));
    auto c = load_checkpoint(checkpoint_path(dir, Stage::c));
    return Pipeline(load_stage_a(a), load_stage_b(b), load_compressor(b), load_stage_c(c),
                    checkpoint_config(c).schedule, checkpoint_config(a).shapes.image_size);
}

torch::Tensor Pipeline::compress(const torch::Tensor& images) {
    torch::NoGradGuard guard;
    compressor_->eval();
    return compressor_->compress(images);
}

torch::Tensor Pipeline::decode(const torch::Tensor& latent) {
    torch::NoGradGuard guard;
    stage_a_->eval();
    return stage_a_->decode(latent);
}

torch::Tensor Pipeline::sample_stage_c(const std::vector<std::string>& prompts, const std::vector<uint64_t>& seeds,
                                       const SamplerConfig& cfg, PassCounter* passes) {
    check_batch(prompts, seeds);
    cfg.validate();
    torch::NoGradGuard guard;
    stage_c_->eval();
    const int64_t b = static_cast<int64_t>(prompts.size());
    auto text = stage_c_->text_encoder->encode(prompts);
    auto null_text = stage_c_->text_encoder->null_batch(b);
    auto gens = generators(seeds, kStageCStream);
    const std::vector<int64_t> shape = {1, stage_c_->cfg.latent_channels, semantic_size_, semantic_size_};
    auto x = per_sample_noise(gens, shape);
    const SamplingGrid grid(schedule_, cfg.steps_c);
    int64_t count = 0;
    for (int64_t i = grid.steps(); i >= 1; --i) {
        auto t = torch::full({b}, grid.t(i));
        auto eps = guided(
            cfg.guidance_c,
            [&](bool cond) { return ab_to_epsilon(x, stage_c_->forward(x, cond ? text : null_text, t)); }, count);
        auto noise = i > 1 ? per_sample_noise(gens, shape) : torch::Tensor();
        x = ddpm_step(x, eps, i, grid, noise);
    }
    if (passes) passes->stage_c += count;
    return x;
}

torch::Tensor Pipeline::sample_stage_b(const torch::Tensor& semantic, const std::vector<std::string>& prompts,
                                       const std::vector<uint64_t>& seeds, const SamplerConfig& cfg,
                                       PassCounter* passes) {
    check_batch(prompts, seeds);
    cfg.validate();
    torch::NoGradGuard guard;
    stage_b_->eval();
    const auto& bc = stage_b_->cfg;
    const int64_t b = static_cast<int64_t>(prompts.size());
    if (bc.use_semantic) {
        if (semantic.dim() != 4 || semantic.size(0) != b || semantic.size(1) != kSemanticChannels ||
            semantic.size(2) != bc.semantic_size || semantic.size(3) != bc.semantic_size)
            throw ShapeError("sample_stage_b: semantic latent does not match the Stage B geometry");
    }
    torch::Tensor text, null_text, null_semantic;
    if (bc.use_text) {
        text = stage_b_->text_encoder->encode(prompts);
        null_text = stage_b_->text_encoder->null_batch(b);
    }
    if (bc.use_semantic) null_semantic = stage_b_->semantic_null(b);

    std::vector<torch::Tensor> init;
    for (auto s : seeds) {
        std::mt19937_64 rng(stream_seed(s, kTokenStream));
        auto x0 = init_stage_b_latents(stage_a_->quantizer->codebook, 1, latent_size_, latent_size_, rng);
        if (cfg.rescale_init) {
            const double sd = x0.std().item<double>();
            if (sd > 0.0) x0 = x0 / sd;
        }
        init.push_back(x0);
    }
    auto x = torch::cat(init);
    auto gens = generators(seeds, kStageBStream);
    const std::vector<int64_t> shape = {1, bc.latent_channels, latent_size_, latent_size_};
    const SamplingGrid grid(schedule_, cfg.steps_b);
    int64_t count = 0;
    for (int64_t i = grid.steps(); i >= 1; --i) {
        auto t = torch::full({b}, grid.t(i));
        auto eps = guided(
            cfg.guidance_b,
            [&](bool cond) {
                return ab_to_epsilon(x, stage_b_->forward(x, cond ? semantic : null_semantic,
                                                          cond ? text : null_text, t));
            },
            count);
        auto noise = i > 1 ? per_sample_noise(gens, shape) : torch::Tensor();
        x = ddpm_step(x, eps, i, grid, noise);
    }
    if (passes) passes->stage_b += count;
    return x;
}

Generation Pipeline::generate(const std::vector<std::string>& prompts, const std::vector<uint64_t>& seeds,
                              const SamplerConfig& cfg) {
    Generation g;
    const auto t0 = std::chrono::steady_clock::now();
    g.semantic = sample_stage_c(prompts, seeds, cfg, &g.passes);
    g.timings.stage_c = seconds_since(t0);
    const auto t1 = std::chrono::steady_clock::now();
    g.latent = sample_stage_b(g.semantic, prompts, seeds, cfg, &g.passes);
    g.timings.stage_b = seconds_since(t1);
    const auto t2 = std::chrono::steady_clock::now();
    g.images = decode(g.latent);
    g.timings.decode = seconds_since(t2);
    g.timings.total = seconds_since(t0);
    return g;
}

nlohmann::json generation_record(const std::string& prompt, uint64_t seed, const SamplerConfig& cfg,
                                 const Generation& g) {
    return {{"prompt", prompt},
            {"seed", seed},
            {"sampler",
             {{"steps_c", cfg.steps_c},
              {"steps_b", cfg.steps_b},
              {"guidance_c", cfg.guidance_c},
              {"guidance_b", cfg.guidance_b},
              {"rescale_init", cfg.rescale_init}}},
            {"passes", {{"stage_c", g.passes.stage_c}, {"stage_b", g.passes.stage_b}, {"total", g.passes.total()}}},
            {"wall_time_s",
             {{"stage_c", g.timings.stage_c},
              {"stage_b", g.timings.stage_b},
              {"decode", g.timings.decode},
              {"total", g.timings.total}}}};
}

double LatencyRow::stage_c_step_share() const {
    const int64_t total = steps_c + steps_b;
    return total > 0 ? static_cast<double>(steps_c) / static_cast<double>(total) : 0.0;
}

std::string LatencyReport::to_csv() const {
    std::string out =
        "batch,steps_c,steps_b,passes_c,passes_b,passes_total,time_c_s,time_b_s,time_decode_s,time_total_s,"
        "stage_c_step_share\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%lld,%lld,%lld,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      static_cast<long long>(r.batch), static_cast<long long>(r.steps_c),
                      static_cast<long long>(r.steps_b), static_cast<long long>(r.passes.stage_c),
                      static_cast<long long>(r.passes.stage_b), static_cast<long long>(r.passes.total()),
                      r.timings.stage_c, r.timings.stage_b, r.timings.decode, r.timings.total,
                      r.stage_c_step_share());
        out += buf;
    }
    return out;
}

nlohmann::json LatencyReport::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back({{"batch", r.batch},
                       {"steps_c", r.steps_c},
                       {"steps_b", r.steps_b},
                       {"passes", {{"stage_c", r.passes.stage_c}, {"stage_b", r.passes.stage_b}, {"total", r.passes.total()}}},
                       {"wall_time_s",
                        {{"stage_c", r.timings.stage_c},
                         {"stage_b", r.timings.stage_b},
                         {"decode", r.timings.decode},
                         {"total", r.timings.total}}},
                       {"stage_c_step_share", r.stage_c_step_share()}});
    return {{"rows", arr}};
}

LatencyReport latency_bench(Pipeline& pipeline, const std::vector<int64_t>& batches, const SamplerConfig& cfg,
                            const std::string& prompt) {
    LatencyReport report;
    for (auto b : batches) {
        if (b < 1) throw ShapeError("latency_bench: batch sizes must be >= 1");
        std::vector<std::string> prompts(static_cast<size_t>(b), prompt);
        std::vector<uint64_t> seeds;
        for (int64_t i = 0; i < b; ++i) seeds.push_back(cfg.seed + static_cast<uint64_t>(i));
        auto g = pipeline.generate(prompts, seeds, cfg);
        report.rows.push_back({b, cfg.steps_c, cfg.steps_b, g.passes, g.timings});
    }
    return report;
}

}  // namespace wurstkit
