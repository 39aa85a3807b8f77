// Acceptance criteria that need no long training: formula oracles, model
// properties, bookkeeping and storage. One PASS/FAIL line per criterion.

#include "../fixtures.hpp"
#include "../oracles.hpp"
#include "report.hpp"
#include "wurstkit/checkpoint.hpp"
#include "wurstkit/diffusion.hpp"
#include "wurstkit/evalkit.hpp"
#include "wurstkit/pipeline.hpp"
#include "wurstkit/stage_a.hpp"
#include "wurstkit/stage_b.hpp"
#include "wurstkit/stage_c.hpp"
#include "wurstkit/train.hpp"

#include <cmath>
#include <random>

using namespace wurstkit;
using acceptance::fmt;
using acceptance::Outcome;

namespace {

// Tolerances, pinned.
constexpr double kScheduleRel = 1e-9;
constexpr double kFormulaRel = 1e-9;
constexpr int kFormulaCases = 200;
constexpr double kZeroInitRel = 1e-6;
constexpr double kInversionRel = 1e-6;
constexpr double kStraightThroughRel = 1e-3;
constexpr int kGradCoords = 50;
constexpr double kGradRel = 1e-2;
// Denominator floor as a fraction of the largest gradient in the network.
constexpr double kGradFloor = 1e-6;
constexpr double kIsAbs = 1e-12;
constexpr double kFidAbs = 1e-6;
constexpr int64_t kResumeSteps = 100;

torch::Tensor d1(double v) { return torch::tensor({v}, torch::kDouble); }

Outcome schedule_suite() {
    NoiseSchedule s;
    const double ab0 = s.alpha_bar(0.0), ab1 = s.alpha_bar(1.0);
    bool monotone = true;
    double prev = ab0;
    for (int k = 1; k <= 1000; ++k) {
        const double v = s.alpha_bar(k * 1e-3);
        monotone = monotone && v < prev;
        prev = v;
    }
    double worst = 0.0;
    for (int64_t n : {1, 12, 60, 1000}) {
        SamplingGrid g(s, n);
        double prod = 1.0;
        for (int64_t k = 1; k <= n; ++k) {
            prod *= g.alpha(k);
            worst = std::max(worst, oracle::rel_err(prod, g.alpha_bar(k) / g.alpha_bar(0)));
        }
    }
    const bool pass = ab0 == 1.0 && ab1 < 1e-3 && monotone && worst < kScheduleRel;
    return {pass, fmt("abar(0)=%.17g, abar(1)=%.3g (<1e-3), strictly decreasing on 1e-3 grid: %s, "
                      "product identity worst rel %.2e (<%.0e)",
                      ab0, ab1, monotone ? "yes" : "no", worst, kScheduleRel)};
}

Outcome formula_oracles() {
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> t01(0.0, 1.0), sym(-3.0, 3.0), w(0.0, 8.0);
    NoiseSchedule s;
    double worst[6] = {0, 0, 0, 0, 0, 0};
    for (int i = 0; i < kFormulaCases; ++i) {
        const double t = t01(rng), x = sym(rng), e = sym(rng), a = sym(rng), b = sym(rng), wv = w(rng);
        const double ab = oracle::cosine_alpha_bar(t, s.offset, s.floor);
        worst[0] = std::max(worst[0], oracle::rel_err(forward_noise(s, d1(x), t, d1(e)).item<double>(),
                                                      std::sqrt(ab) * x + std::sqrt(1 - ab) * e));
        worst[1] = std::max(worst[1], oracle::rel_err(s.p2_weight(t), oracle::p2_from_alpha_bar(ab)));
        worst[2] = std::max(worst[2], oracle::rel_err(ab_to_epsilon(d1(x), {d1(a), d1(b)}).item<double>(),
                                                      (x - a) / (std::abs(1 - b) + 1e-5)));
        const double t1 = std::max(t, 1e-3), t0 = t1 * t01(rng);
        const double ab_t = oracle::cosine_alpha_bar(t1, s.offset, s.floor);
        const double ab_p = oracle::cosine_alpha_bar(t0, s.offset, s.floor);
        worst[3] = std::max(worst[3], oracle::rel_err(ddpm_step(d1(x), d1(e), ab_t, ab_p, d1(a), false).item<double>(),
                                                      oracle::ddpm_scalar(x, e, ab_t, ab_p, a, false)));
        worst[4] = std::max(worst[4], oracle::rel_err(cfg_combine(d1(a), d1(b), wv).item<double>(), a + wv * (b - a)));
        worst[5] = std::max(worst[5], oracle::rel_err(weighted_loss(s, d1(x), d1(e), t).item<double>(),
                                                      oracle::p2_from_alpha_bar(ab) * (x - e) * (x - e)));
    }
    const double all = *std::max_element(worst, worst + 6);
    return {all < kFormulaRel,
            fmt("%d cases each; worst rel: forward_noise %.1e, p2_weight %.1e, ab_to_epsilon %.1e, ddpm_step %.1e, "
                "cfg_combine %.1e, weighted_loss %.1e (<%.0e)",
                kFormulaCases, worst[0], worst[1], worst[2], worst[3], worst[4], worst[5], kFormulaRel)};
}

Outcome zero_init_identity() {
    torch::manual_seed(31);
    StageCConfig cfg;
    StageCPrior net(cfg);
    net->to(torch::kDouble);
    net->eval();
    torch::NoGradGuard g;
    double worst = 0.0;
    for (int64_t side : {2, 4, 6}) {
        auto x = torch::randn({3, 16, side, side}, torch::kDouble);
        auto text = net->text_encoder->encode(std::vector<std::string>{"red circle", "", "large blue square on gray"});
        auto eps = ab_to_epsilon(x, net->forward(x, text, torch::rand({3}, torch::kDouble)));
        worst = std::max(worst, ((eps - x / (1 + 1e-5)).abs() / x.abs().clamp_min(1e-300)).max().item<double>());
    }
    return {worst < kZeroInitRel, fmt("default Stage C, eps vs x_t/(1+1e-5) worst rel %.2e (<%.0e)", worst, kZeroInitRel)};
}

Outcome one_step_inversion() {
    NoiseSchedule s;
    SamplingGrid g(s, 1);
    torch::manual_seed(41);
    auto x0 = torch::randn({8, 4, 16, 16}, torch::kDouble);
    auto eps = torch::randn_like(x0);
    auto xt = forward_noise(s, x0, 1.0, eps);
    auto rec = ddpm_step(xt, eps, 1, g, torch::Tensor());
    const double rel = ((rec - x0).abs().max() / x0.abs().max()).item<double>();
    return {rel < kInversionRel, fmt("tau=1, perfect eps: max|x0_hat - x0|/max|x0| = %.2e (<%.0e)", rel, kInversionRel)};
}

Outcome vq_suite() {
    // Brute-force optimality.
    int64_t mismatches = 0, cells = 0;
    for (int64_t k : {1, 2, 7, 16, 33, 64}) {
        torch::manual_seed(static_cast<uint64_t>(100 + k));
        VectorQuantizer q(k, 4);
        {
            torch::NoGradGuard g;
            q->codebook.normal_();
        }
        auto z = torch::randn({4, 4, 6, 6});
        auto idx = q->quantize(z).indices.flatten();
        auto flat = z.permute({0, 2, 3, 1}).reshape({-1, 4}).to(torch::kDouble);
        auto book = q->codebook.to(torch::kDouble);
        for (int64_t i = 0; i < flat.size(0); ++i) {
            double best = 1e300;
            int64_t best_j = 0;
            for (int64_t j = 0; j < k; ++j) {
                const double dist = (flat[i] - book[j]).square().sum().item<double>();
                if (dist < best) best = dist, best_j = j;
            }
            mismatches += idx[i].item<int64_t>() != best_j;
            ++cells;
        }
    }
    // Tie-break: equidistant entries resolve to the lowest index, every time.
    VectorQuantizer tie(4, 2);
    {
        torch::NoGradGuard g;
        tie->codebook.copy_(torch::tensor({{5.f, 5.f}, {0.f, 1.f}, {1.f, 0.f}, {-1.f, 0.f}}));
    }
    bool tie_ok = true;
    for (int rep = 0; rep < 10; ++rep)
        tie_ok = tie_ok && tie->quantize(torch::zeros({2, 2, 3, 3})).indices.eq(1).all().item<bool>();

    // Straight-through on a micro encoder/decoder: the analytic gradient must
    // equal finite differences of the surrogate with the quantization offset
    // (zq - z) held fixed.
    torch::manual_seed(51);
    auto x = torch::randn({6, 5}, torch::kDouble);
    auto enc = torch::randn({4, 5}, torch::kDouble).requires_grad_(true);
    auto dec = torch::randn({3, 4}, torch::kDouble);
    auto target = torch::randn({6, 3}, torch::kDouble);
    VectorQuantizer q(8, 4);
    {
        torch::NoGradGuard g;
        q->codebook.normal_();
    }
    auto encode = [&](const torch::Tensor& w) { return torch::matmul(x, w.t()).view({6, 4, 1, 1}); };
    auto z = encode(enc);
    auto zq = q->quantize(z.detach().to(torch::kFloat)).quantized.to(torch::kDouble);
    auto offset = (zq - z).detach();
    auto loss_of = [&](const torch::Tensor& latent) {
        return (torch::matmul(latent.view({6, 4}), dec.t()) - target).square().sum();
    };
    loss_of(straight_through(z, zq)).backward();
    auto analytic = enc.grad().clone();
    double st_worst = 0.0;
    {
        torch::NoGradGuard g;
        auto w = enc.detach().clone();
        for (int64_t i = 0; i < w.numel(); ++i) {
            auto flat = w.view(-1);
            const double orig = flat[i].item<double>(), h = 1e-6;
            flat[i] = orig + h;
            const double up = loss_of(encode(w) + offset).item<double>();
            flat[i] = orig - h;
            const double down = loss_of(encode(w) + offset).item<double>();
            flat[i] = orig;
            const double num = (up - down) / (2 * h), ana = analytic.view(-1)[i].item<double>();
            st_worst = std::max(st_worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}));
        }
    }
    const bool pass = mismatches == 0 && tie_ok && st_worst < kStraightThroughRel;
    return {pass, fmt("brute force K<=64: %lld/%lld cells optimal; tie-break lowest index x10: %s; "
                      "straight-through vs FD worst rel %.2e (<%.0e)",
                      static_cast<long long>(cells - mismatches), static_cast<long long>(cells),
                      tie_ok ? "yes" : "no", st_worst, kStraightThroughRel)};
}

template <class F>
std::pair<int, double> check_params(torch::nn::Module& net, F&& f, uint64_t seed) {
    const double floor = kGradFloor * oracle::global_grad_scale(net, f);
    int checked = 0;
    double worst = 0.0;
    for (auto& p : net.named_parameters()) {
        // Text embeddings are fed in directly, so the encoder is off the graph.
        if (p.value().numel() < 4 || p.key().rfind("text_encoder.", 0) == 0 || p.key() == "null_semantic") continue;
        worst = std::max(worst, oracle::gradient_check(p.value(), f, 3, seed + checked, 1e-6, floor));
        checked += 3;
    }
    return {checked, worst};
}

Outcome gradient_checks() {
    torch::manual_seed(61);
    StageBConfig bc;
    bc.widths = {8, 16};
    bc.blocks = {1, 1};
    bc.heads = {0, 2};
    bc.expansion = 2;
    bc.time_dim = 8;
    bc.cond_dim = 8;
    bc.semantic_size = 2;
    bc.text.dim = 8;
    bc.text.max_tokens = 4;
    bc.text.vocab_size = 64;
    StageBUNet b(bc);
    StageCConfig cc;
    cc.blocks = 2;
    cc.width = 16;
    cc.heads = 2;
    cc.expansion = 2;
    cc.time_dim = 8;
    cc.cond_dim = 16;
    cc.text = bc.text;
    StageCPrior c(cc);
    {
        torch::NoGradGuard g;
        for (auto* head : {&b->head, &c->head}) {
            (*head)->weight.normal_(0.0, 0.1);
            (*head)->bias.normal_(0.0, 0.1);
        }
    }
    b->to(torch::kDouble);
    c->to(torch::kDouble);

    auto xb = torch::randn({2, 4, 8, 8}, torch::kDouble);
    auto sem = torch::randn({2, 16, 2, 2}, torch::kDouble);
    auto text = torch::randn({2, 4, 8}, torch::kDouble);
    auto tb = torch::tensor({0.2, 0.8}, torch::kDouble);
    auto rab = torch::randn_like(xb), rbb = torch::randn_like(xb);
    auto [nb, wb] = check_params(*b, [&] {
        auto p = b->forward(xb, sem, text, tb);
        return (p.a * rab + p.b * rbb).sum();
    }, 1000);

    auto xc = torch::randn({2, 16, 3, 3}, torch::kDouble);
    auto tc = torch::tensor({0.3, 0.9}, torch::kDouble);
    auto rac = torch::randn_like(xc), rbc = torch::randn_like(xc);
    auto [nc, wc] = check_params(*c, [&] {
        auto p = c->forward(xc, text, tc);
        return (p.a * rac + p.b * rbc).sum();
    }, 2000);
    const bool pass = nb >= kGradCoords && nc >= kGradCoords && wb < kGradRel && wc < kGradRel;
    return {pass, fmt("Stage B %d coords worst rel %.2e, Stage C %d coords worst rel %.2e (>=%d coords, <%.0e; "
                      "denominator floor %.0e x largest gradient)",
                      nb, wb, nc, wc, kGradCoords, kGradRel, kGradFloor)};
}

Pipeline untrained_desk_pipeline(const RunConfig& cfg) {
    torch::manual_seed(71);
    return Pipeline(VQGAN(cfg.stage_a), StageBUNet(cfg.stage_b), SemanticCompressor(cfg.compressor),
                    StageCPrior(cfg.stage_c), cfg.schedule, cfg.shapes.image_size);
}

Outcome step_accounting() {
    RunConfig cfg;
    cfg.resolve();
    auto p = untrained_desk_pipeline(cfg);
    auto report = latency_bench(p, {1}, cfg.sampler, "red circle");
    const auto& row = report.rows.at(0);
    SamplerConfig plain = cfg.sampler;
    plain.guidance_c = 1.0;
    plain.guidance_b = 1.0;
    const auto unguided = p.generate({"red circle"}, {0}, plain).passes;
    const double share = row.stage_c_step_share();
    const bool pass = cfg.sampler.steps_c == 60 && cfg.sampler.steps_b == 12 && row.passes.stage_c == 120 &&
                      row.passes.stage_b == 24 && row.passes.total() == 144 && share == 60.0 / 72.0 &&
                      unguided.total() == 72;
    return {pass, fmt("tau_C=%lld, tau_B=%lld: passes C=%lld B=%lld total=%lld (expected 144); without guidance %lld "
                      "(expected 72); Stage C step share %.6f (60/72 = %.6f)",
                      static_cast<long long>(cfg.sampler.steps_c), static_cast<long long>(cfg.sampler.steps_b),
                      static_cast<long long>(row.passes.stage_c), static_cast<long long>(row.passes.stage_b),
                      static_cast<long long>(row.passes.total()), static_cast<long long>(unguided.total()), share,
                      60.0 / 72.0)};
}

Outcome fid_is_cases() {
    std::mt19937_64 rng(81);
    std::normal_distribution<double> n(0.0, 1.0);
    double self_worst = 0.0, shift_worst = 0.0;
    for (int d : {3, 8, 32}) {
        Eigen::MatrixXd a(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) a(i, j) = n(rng);
        Eigen::MatrixXd cov = a * a.transpose() / d + 0.1 * Eigen::MatrixXd::Identity(d, d);
        Eigen::VectorXd m(d), shift(d);
        for (int i = 0; i < d; ++i) m[i] = n(rng), shift[i] = n(rng);
        FeatureStats s1{m, cov, 1000}, s2{m + shift, cov, 1000};
        self_worst = std::max(self_worst, std::abs(fid(s1, s1)));
        shift_worst = std::max(shift_worst, std::abs(fid(s1, s2) - shift.squaredNorm()));
    }
    std::gamma_distribution<double> g(0.5, 1.0);
    bool bounds = true;
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + trial % 10;
        Eigen::MatrixXd p(20, k);
        for (int i = 0; i < 20; ++i) {
            for (int j = 0; j < k; ++j) p(i, j) = g(rng) + 1e-12;
            p.row(i) /= p.row(i).sum();
        }
        const double is = inception_score(p);
        bounds = bounds && is >= 1.0 && is <= k;
    }
    const double uniform = inception_score(Eigen::MatrixXd::Constant(12, 5, 0.2));
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(15, 5);
    for (int i = 0; i < 15; ++i) onehot(i, i % 5) = 1.0;
    const double balanced = inception_score(onehot);
    const bool pass = self_worst <= kFidAbs && shift_worst <= kFidAbs && bounds && std::abs(uniform - 1.0) <= kIsAbs &&
                      std::abs(balanced - 5.0) <= kIsAbs;
    return {pass, fmt("FID(a,a) worst %.1e, shared-cov shift worst |err| %.1e (<=%.0e); IS in [1,K] on 200 random "
                      "sets: %s; uniform -> %.17g, balanced one-hot K=5 -> %.17g (|err| <= %.0e)",
                      self_worst, shift_worst, kFidAbs, bounds ? "yes" : "no", uniform, balanced, kIsAbs)};
}

Checkpoint synthetic(double base) {
    Checkpoint ck;
    ck.manifest = {{"stage", "stage_c"}, {"step", 1}};
    torch::manual_seed(static_cast<uint64_t>(base * 1000));
    ck.tensors["w"] = torch::tensor({static_cast<float>(base)});
    ck.tensors["m"] = torch::randn({7, 5});
    ck.tensors["v"] = torch::randn({3});
    return ck;
}

Outcome interpolation() {
    auto a = synthetic(2.0), b = synthetic(4.0);
    auto m0 = interpolate_weights(a, b, 0.0), m1 = interpolate_weights(a, b, 1.0), mh = interpolate_weights(a, b, 0.5);
    bool ends = true;
    double half_worst = 0.0;
    for (const auto& [name, t] : a.tensors) {
        ends = ends && torch::equal(m0.at(name), t) && torch::equal(m1.at(name), b.at(name));
        auto want = 0.5 * (t.to(torch::kDouble) + b.at(name).to(torch::kDouble));
        half_worst = std::max(half_worst, (mh.at(name).to(torch::kDouble) - want).abs().max().item<double>());
    }
    const double three = mh.at("w").item<float>();

    // Two short desk-geometry Stage C runs from different seeds over shared
    // A and B, merged 50:50 and sampled.
    fixtures::TempDir dir("acc_merge"), other("acc_merge_b");
    RunConfig cfg;
    cfg.train.synth.count = 64;
    for (auto* s : {&cfg.train.stage_a, &cfg.train.stage_b, &cfg.train.stage_c}) {
        s->steps = 3;
        s->batch_size = 4;
        s->optim.warmup_steps = 1;
    }
    cfg.resolve();
    TrainOptions opts;
    opts.checkpoint_dir = dir.path();
    for (Stage s : {Stage::a, Stage::b, Stage::c}) run_training(s, cfg, opts);
    for (const char* f : {"stage_a.ckpt", "stage_b.ckpt"}) std::filesystem::copy_file(dir / f, other / f);
    auto cfg2 = cfg;
    cfg2.train.seed = 1;
    opts.checkpoint_dir = other.path();
    run_training(Stage::c, cfg2, opts);
    auto merged = interpolate_weights(load_checkpoint(dir / "stage_c.ckpt"), load_checkpoint(other / "stage_c.ckpt"), 0.5);
    merged.manifest["config"] = to_json(cfg);
    merged.manifest["stage"] = "stage_c";
    save_checkpoint(merged, dir / "stage_c.ckpt");
    auto p = Pipeline::load(dir.path());
    auto gen = p.generate({"red circle", "green square"}, {3, 4}, cfg.sampler);
    const bool finite = torch::isfinite(gen.images).all().item<bool>() && torch::isfinite(gen.semantic).all().item<bool>();

    const bool pass = ends && half_worst <= 1e-6 && three == 3.0 && finite;
    return {pass, fmt("lambda=0 and 1 bitwise: %s; lambda=0.5 {2}+{4} -> %g, worst |err| vs double mean %.1e; merged "
                      "desk Stage C samples %s",
                      ends ? "yes" : "no", three, half_worst, finite ? "finite" : "NON-FINITE")};
}

Outcome storage() {
    fixtures::TempDir dir("acc_store");
    auto cfg = fixtures::tiny_config();
    cfg.train.stage_a.steps = kResumeSteps;
    cfg.train.stage_a.checkpoint_every = 0;
    cfg.stage_a.revive_every = 10;
    const auto data = training_corpus(cfg);

    TrainOptions full;
    full.checkpoint_dir = dir / "full";
    full.dataset = &data;
    auto straight = run_training(Stage::a, cfg, full);

    TrainOptions split = full;
    split.checkpoint_dir = dir / "split";
    split.stop_at = kResumeSteps / 2;
    auto first = run_training(Stage::a, cfg, split);
    split.stop_at = -1;
    split.resume = true;
    auto second = run_training(Stage::a, cfg, split);
    auto joined = first.history;
    joined.insert(joined.end(), second.history.begin(), second.history.end());
    const bool same_losses = joined == straight.history && second.first_step == kResumeSteps / 2;
    const bool same_bytes = read_file(dir / "full" / "stage_a.ckpt") == read_file(dir / "split" / "stage_a.ckpt");

    // save -> load -> save on a trained checkpoint.
    const auto path = dir / "full" / "stage_a.ckpt";
    save_checkpoint(load_checkpoint(path), dir / "again.ckpt");
    const bool roundtrip = read_file(path) == read_file(dir / "again.ckpt");

    // A writer abandoned mid-file (as on a crash before rename) leaves the old
    // file in place and no partial file under the final name.
    const auto original = read_file(path);
    std::filesystem::path temp;
    {
        AtomicFile f(path);
        temp = f.temp_path();
        f.write(std::string_view(original).substr(0, original.size() / 3));
    }
    bool atomic = read_file(path) == original && !std::filesystem::exists(temp);
    load_checkpoint(path);
    atomic = atomic && Checkpoint::parse(read_file(path)).serialize() == original;

    const bool pass = same_losses && same_bytes && roundtrip && atomic;
    return {pass, fmt("save/load/save byte-identical: %s; abandoned write leaves old file intact: %s; resume at step "
                      "%lld of %lld: loss sequence bit-equal %s, final checkpoint bytes equal %s",
                      roundtrip ? "yes" : "no", atomic ? "yes" : "no", static_cast<long long>(kResumeSteps / 2),
                      static_cast<long long>(kResumeSteps), same_losses ? "yes" : "no", same_bytes ? "yes" : "no")};
}

}  // namespace

int main() {
    torch::set_num_threads(1);
    acceptance::Report r;
    r.run(1, "schedule suite", schedule_suite, 1.0);
    r.run(2, "formula oracles", formula_oracles, 1.0);
    r.run(3, "zero-init Stage C returns the input", zero_init_identity);
    r.run(4, "one-step inversion", one_step_inversion);
    r.run(5, "VQ suite", vq_suite);
    r.run(6, "gradient checks", gradient_checks, 120.0);
    r.run(8, "step accounting", step_accounting);
    r.run(9, "FID/IS analytic cases", fid_is_cases);
    r.run(11, "weight interpolation", interpolation);
    r.run(12, "checkpoint round trip, atomicity, resume", storage);
    return r.exit_code();
}
