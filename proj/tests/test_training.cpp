#include "doctest_torch.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "wurstkit/checkpoint.hpp"
#include "wurstkit/config.hpp"
#include "wurstkit/dataset.hpp"
#include "wurstkit/errors.hpp"
#include "wurstkit/models.hpp"
#include "wurstkit/optim.hpp"
#include "wurstkit/train.hpp"

#include <cmath>
#include <fstream>
#include <set>

using namespace wurstkit;
using fixtures::TempDir;

namespace {

Checkpoint synthetic_ckpt(std::initializer_list<std::pair<const char*, torch::Tensor>> tensors) {
    Checkpoint ck;
    ck.manifest = {{"stage", "stage_c"}, {"step", 3}, {"provenance", {{"kind", "training"}}}};
    for (const auto& [n, t] : tensors) ck.tensors[n] = t;
    return ck;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("warmup schedule exact at integer steps") {
    AdamWConfig cfg;
    cfg.lr = 1e-4;
    cfg.warmup_steps = 250;
    CHECK(warmup_lr(cfg, 0) == 0.0);
    CHECK(warmup_lr(cfg, 250) == 1e-4);
    CHECK(warmup_lr(cfg, 125) == doctest::Approx(5e-5).epsilon(1e-15));
    for (int64_t s = 0; s <= 250; ++s) REQUIRE(warmup_lr(cfg, s) == doctest::Approx(1e-4 * s / 250.0).epsilon(1e-14));
    CHECK(warmup_lr(cfg, 10000) == 1e-4);
    cfg.warmup_steps = 0;
    CHECK(warmup_lr(cfg, 0) == 1e-4);
}

TEST_CASE("AdamW matches the decoupled update on a scalar probe") {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    auto p = torch::tensor({1.5}, torch::kDouble).requires_grad_(true);
    AdamW opt({{"p", p}}, cfg);
    double want = 1.5, m = 0.0, v = 0.0;
    const std::vector<double> grads = {0.3, -1.2, 0.05, 2.0, -0.7};
    for (size_t k = 0; k < grads.size(); ++k) {
        opt.zero_grad();
        (p * grads[k]).sum().backward();
        const double lr = 0.1 * (k + 1) / 5.0;
        opt.step(lr);
        const double g = grads[k];
        want -= lr * cfg.weight_decay * want;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, k + 1)), vh = v / (1 - std::pow(0.999, k + 1));
        want -= lr * mh / (std::sqrt(vh) + 1e-8);
        REQUIRE(std::abs(p.item<double>() - want) < 1e-7);
    }
    CHECK(opt.updates() == 5);
}

TEST_CASE("AdamW state export/import continues identically") {
    AdamWConfig cfg;
    cfg.lr = 0.05;
    auto a = torch::randn({3}, torch::kDouble).requires_grad_(true);
    auto b = a.detach().clone().requires_grad_(true);
    AdamW oa({{"w", a}}, cfg), ob({{"w", b}}, cfg);
    auto step = [](AdamW& o, torch::Tensor& t, double g) {
        o.zero_grad();
        (t * g).sum().backward();
        o.step(0.05);
    };
    step(oa, a, 1.0);
    step(oa, a, -2.0);
    std::map<std::string, torch::Tensor> state;
    oa.export_state(state, "optim.");
    CHECK(state.count("optim.w.m") == 1);
    {
        torch::NoGradGuard g;
        b.copy_(a);
    }
    ob.import_state(state, "optim.");
    step(oa, a, 0.5);
    step(ob, b, 0.5);
    CHECK(torch::equal(a, b));
    CHECK_THROWS_AS(AdamW({{"w", a}}, AdamWConfig{0.0}), DomainError);
}

}

TEST_SUITE("checkpoint") {

TEST_CASE("serialize/parse/serialize is byte-identical") {
    auto ck = synthetic_ckpt({{"b.w", torch::randn({2, 3})}, {"a.bias", torch::randn({5})}, {"z", torch::zeros({0})}});
    const auto bytes = ck.serialize();
    CHECK(bytes.substr(0, 8) == "WKCKPT01");
    auto back = Checkpoint::parse(bytes);
    CHECK(back.serialize() == bytes);
    CHECK(torch::equal(back.at("b.w"), ck.at("b.w")));
    CHECK(back.step() == 3);
    CHECK(back.stage() == "stage_c");
}

TEST_CASE("save/load/save produces identical files") {
    TempDir dir("ckpt");
    auto ck = synthetic_ckpt({{"w", torch::randn({4, 4})}});
    save_checkpoint(ck, dir / "a.ckpt");
    save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
    CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
}

TEST_CASE("tensor records are little-endian f32 with a covering hash") {
    auto ck = synthetic_ckpt({{"w", torch::tensor({1.0f, -2.0f})}});
    auto bytes = ck.serialize();
    uint64_t n = 0;
    std::memcpy(&n, bytes.data() + 8, 8);
    auto manifest = nlohmann::json::parse(bytes.substr(16, n));
    CHECK(manifest["format_version"] == 1);
    CHECK(manifest["tensors"][0]["name"] == "w");
    const auto data = bytes.substr(16 + n);
    CHECK(data.size() == 8u);
    CHECK(manifest["tensor_sha256"] == sha256_hex(data));
    float first = 0;
    std::memcpy(&first, data.data(), 4);
    CHECK(first == 1.0f);
    bytes[bytes.size() - 1] ^= 0x01;
    CHECK_THROWS_AS(Checkpoint::parse(bytes), FormatError);
    CHECK_THROWS_AS(Checkpoint::parse("NOTACKPT12345678"), FormatError);
}

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("interrupted writes never surface under the final name") {
    TempDir dir("atomic");
    const auto target = dir / "x.ckpt";
    {
        std::ofstream(target) << "old";
    }
    std::filesystem::path temp;
    {
        AtomicFile f(target);
        temp = f.temp_path();
        f.write("partial new contents");
        CHECK(std::filesystem::exists(temp));
        CHECK(read_file(target) == "old");
    }
    CHECK_FALSE(std::filesystem::exists(temp));
    CHECK(read_file(target) == "old");
    {
        AtomicFile f(target);
        f.write("new");
        f.commit();
    }
    CHECK(read_file(target) == "new");
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), PreconditionError);
}

TEST_CASE("interpolate_weights exactness") {
    auto a = synthetic_ckpt({{"w", torch::tensor({2.0f})}, {"v", torch::randn({3, 3})}, {"optim.w.m", torch::ones({1})}});
    auto b = synthetic_ckpt({{"w", torch::tensor({4.0f})}, {"v", torch::randn({3, 3})}, {"optim.w.m", torch::ones({1})}});
    auto m0 = interpolate_weights(a, b, 0.0);
    auto m1 = interpolate_weights(a, b, 1.0);
    auto mh = interpolate_weights(a, b, 0.5);
    CHECK(torch::equal(m0.at("v"), a.at("v")));
    CHECK(torch::equal(m1.at("v"), b.at("v")));
    CHECK(mh.at("w").item<float>() == 3.0f);
    CHECK(torch::allclose(mh.at("v"), (a.at("v") + b.at("v")) / 2));
    CHECK_FALSE(mh.has("optim.w.m"));
    CHECK(mh.manifest["provenance"]["lambda"] == 0.5);
    CHECK_THROWS_AS(interpolate_weights(a, b, 1.5), DomainError);
    auto c = synthetic_ckpt({{"w", torch::tensor({1.0f, 2.0f})}, {"v", torch::randn({3, 3})}});
    CHECK_THROWS_AS(interpolate_weights(a, c, 0.5), ShapeError);
    auto d = synthetic_ckpt({{"u", torch::tensor({1.0f})}, {"v", torch::randn({3, 3})}});
    CHECK_THROWS_AS(interpolate_weights(a, d, 0.5), ShapeError);
}

TEST_CASE("module export/import is strict") {
    torch::nn::Linear l1(3, 2), l2(3, 2);
    std::map<std::string, torch::Tensor> m;
    export_module(*l1, "lin.", m);
    import_module(*l2, "lin.", m);
    CHECK(torch::equal(l1->weight, l2->weight));
    m.erase("lin.bias");
    CHECK_THROWS_AS(import_module(*l2, "lin.", m), FormatError);
}

}

TEST_SUITE("dataset") {

TEST_CASE("synthetic corpus is deterministic per seed") {
    SynthSpec spec;
    spec.count = 40;
    auto a = synth_dataset(spec, 5), b = synth_dataset(spec, 5), c = synth_dataset(spec, 6);
    CHECK(manifest_to_jsonl(a) == manifest_to_jsonl(b));
    CHECK(manifest_to_jsonl(a) != manifest_to_jsonl(c));
    auto da = load_dataset(a, 64), db = load_dataset(b, 64);
    CHECK(torch::equal(da.images, db.images));
}

TEST_CASE("all twelve shape-color combinations appear in 1000 records") {
    SynthSpec spec;
    auto m = synth_dataset(spec, 0);
    CHECK(m.records.size() == 1000u);
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : m.records) seen.insert({r.generator["shape"].get<std::string>(), r.generator["color"].get<std::string>()});
    CHECK(seen.size() == 12u);
}

TEST_CASE("red circle renders red") {
    SynthSpec spec;
    spec.count = 400;
    auto m = synth_dataset(spec, 1);
    int checked = 0;
    for (const auto& r : m.records) {
        if (r.caption != "red circle") continue;
        auto img = render_synthetic(r.generator);
        auto mean = img.mean({1, 2});
        CHECK(mean[0].item<double>() > mean[1].item<double>());
        CHECK(mean[0].item<double>() > mean[2].item<double>());
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("caption forms") {
    SynthSpec spec;
    spec.count = 300;
    auto m = synth_dataset(spec, 2);
    int short_form = 0;
    for (const auto& r : m.records) {
        const auto& g = r.generator;
        const std::string s = g["color"].get<std::string>() + " " + g["shape"].get<std::string>();
        if (r.caption == s)
            ++short_form;
        else
            REQUIRE(r.caption == g["size"].get<std::string>() + " " + s + " on " + g["background"].get<std::string>());
    }
    CHECK(short_form > 0);
    CHECK(short_form < 300);
}

TEST_CASE("manifest JSON-lines round trip and validation") {
    SynthSpec spec;
    spec.count = 5;
    auto m = synth_dataset(spec, 3);
    auto back = manifest_from_jsonl(manifest_to_jsonl(m), ".");
    CHECK(manifest_to_jsonl(back) == manifest_to_jsonl(m));
    CHECK_THROWS_AS(manifest_from_jsonl("{\"key\":\"a\",\"caption\":\"x\"}\n", "."), FormatError);
    spec.colors.clear();
    CHECK_THROWS_AS(synth_dataset(spec, 0), DomainError);
    CHECK_THROWS_AS(nlohmann::json::parse(R"({"count": 3, "bogus": 1})").get<SynthSpec>(), FormatError);
}

}

TEST_SUITE("config") {

TEST_CASE("defaults resolve and round-trip") {
    RunConfig cfg;
    cfg.resolve();
    CHECK(cfg.stage_b.semantic_size == 4);
    CHECK(cfg.sampler.steps_c == 60);
    CHECK(cfg.sampler.steps_b == 12);
    auto again = parse_run_config(to_json(cfg));
    CHECK(to_json(again) == to_json(cfg));
    auto partial = parse_run_config(nlohmann::json::parse(R"({"sampler": {"steps_c": 30}})"));
    CHECK(partial.sampler.steps_c == 30);
    CHECK(partial.sampler.steps_b == 12);
}

TEST_CASE("unknown keys, wrong types and schema mismatch are rejected") {
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"sampler": {"stepsc": 30}})")), FormatError);
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"colour": 1})")), FormatError);
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"sampler": {"steps_c": "many"}})")), FormatError);
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"schema_version": 2})")), FormatError);
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"sampler": {"steps_c": 0}})")), DomainError);
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"shapes": {"image_size": 30}})")), ShapeError);
}

}

TEST_SUITE("train") {

TEST_CASE("stage order preconditions") {
    TempDir dir("order");
    auto cfg = fixtures::tiny_config();
    TrainOptions opts;
    opts.checkpoint_dir = dir.path();
    CHECK_THROWS_AS(run_training(Stage::b, cfg, opts), PreconditionError);
    CHECK_THROWS_AS(run_training(Stage::baseline, cfg, opts), PreconditionError);
    CHECK_THROWS_AS(run_training(Stage::c, cfg, opts), PreconditionError);
    CHECK_THROWS_AS(run_training(Stage::probe, cfg, opts), PreconditionError);
}

TEST_CASE("periodic checkpoints, manifest fields and loss CSV") {
    TempDir dir("ckpts");
    auto cfg = fixtures::tiny_config();
    TrainOptions opts;
    opts.checkpoint_dir = dir.path();
    opts.stop_at = 2;
    auto r = run_training(Stage::a, cfg, opts);
    CHECK(r.history.size() == 2u);
    auto ck = load_checkpoint(checkpoint_path(dir.path(), Stage::a));
    CHECK(ck.stage() == "stage_a");
    CHECK(ck.step() == 2);
    CHECK(ck.manifest["total_steps"] == 4);
    CHECK(ck.manifest.contains("rng"));
    CHECK(ck.manifest["config"]["shapes"]["image_size"] == 32);
    auto csv = read_file(dir / "stage_a_loss.csv");
    CHECK(csv.rfind("step,term,value\n0,lr,0\n", 0) == 0);
    CHECK(csv.find("\n1,mse,") != std::string::npos);
    CHECK(csv.find("\n2,") == std::string::npos);
}

TEST_CASE("resume reproduces the uninterrupted run bit-exactly") {
    auto cfg = fixtures::tiny_config();
    cfg.train.stage_a.steps = 6;
    cfg.train.stage_a.checkpoint_every = 100;
    cfg.stage_a.revive_every = 2;
    const auto data = training_corpus(cfg);
    TempDir full("full"), split("split");
    TrainOptions o1;
    o1.checkpoint_dir = full.path();
    o1.dataset = &data;
    auto straight = run_training(Stage::a, cfg, o1);

    TrainOptions o2 = o1;
    o2.checkpoint_dir = split.path();
    o2.stop_at = 3;
    auto first = run_training(Stage::a, cfg, o2);
    o2.stop_at = -1;
    o2.resume = true;
    auto second = run_training(Stage::a, cfg, o2);
    CHECK(second.first_step == 3);
    REQUIRE(first.history.size() + second.history.size() == straight.history.size());
    for (size_t i = 0; i < straight.history.size(); ++i) {
        const auto& got = i < 3 ? first.history[i] : second.history[i - 3];
        REQUIRE(got == straight.history[i]);
    }
    CHECK(read_file(full / "stage_a.ckpt") == read_file(split / "stage_a.ckpt"));
    CHECK(read_file(full / "stage_a_loss.csv") == read_file(split / "stage_a_loss.csv"));
}

TEST_CASE("every stage trains on the tiny geometry") {
    TempDir dir("stages");
    auto cfg = fixtures::tiny_config();
    TrainOptions opts;
    opts.checkpoint_dir = dir.path();
    for (Stage s : {Stage::a, Stage::b, Stage::baseline, Stage::c, Stage::probe, Stage::extractor}) {
        auto r = run_training(s, cfg, opts);
        CHECK(r.checkpoint.stage() == stage_name(s));
        CHECK(r.checkpoint.step() == 4);
    }
    auto b = load_checkpoint(checkpoint_path(dir.path(), Stage::b));
    CHECK(b.manifest["upstream"].contains("stage_a"));
    CHECK_NOTHROW(load_stage_b(b));
    CHECK_NOTHROW(load_compressor(b));
    CHECK_NOTHROW(load_stage_b(load_checkpoint(checkpoint_path(dir.path(), Stage::baseline))));
    CHECK_THROWS_AS(require_stage(b, Stage::c), PreconditionError);
    CHECK(checkpoint_version(b).size() == 12u);
}

TEST_CASE("stage names") {
    CHECK(parse_stage("stage-a") == Stage::a);
    CHECK(parse_stage("stage_c") == Stage::c);
    CHECK(parse_stage("baseline") == Stage::baseline);
    CHECK_THROWS(parse_stage("stage-d"));
    CHECK(step_seed(1, 2) != step_seed(1, 3));
    CHECK(step_seed(1, 2) == step_seed(1, 2));
}

}
