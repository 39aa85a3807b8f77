#include "doctest_torch.hpp"
#include "oracles.hpp"
#include "wurstkit/dataset.hpp"
#include "wurstkit/errors.hpp"
#include "wurstkit/evalkit.hpp"

#include <cmath>
#include <random>

using namespace wurstkit;

namespace {

Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng, double ridge = 0.1) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = n(rng);
    return a * a.transpose() / d + ridge * Eigen::MatrixXd::Identity(d, d);
}

Eigen::VectorXd random_vec(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = n(rng);
    return v;
}

FeatureStats stats_of(const Eigen::VectorXd& m, const Eigen::MatrixXd& s) { return {m, s, 100}; }

torch::Tensor corpus_images(int64_t n, uint64_t seed) {
    SynthSpec spec;
    spec.count = n;
    return load_dataset(synth_dataset(spec, seed), 64).images;
}

}  // namespace

TEST_SUITE("fid") {

TEST_CASE("identical statistics give zero") {
    std::mt19937_64 rng(1);
    for (int d : {1, 3, 8, 32}) {
        auto s = stats_of(random_vec(d, rng), random_spd(d, rng));
        CHECK(std::abs(fid(s, s)) <= 1e-6);
    }
}

TEST_CASE("shared covariance reduces to the squared mean shift") {
    std::mt19937_64 rng(2);
    for (int d : {2, 5, 16}) {
        auto cov = random_spd(d, rng);
        auto m = random_vec(d, rng), shift = random_vec(d, rng);
        const double got = fid(stats_of(m, cov), stats_of(m + shift, cov));
        CHECK(std::abs(got - shift.squaredNorm()) <= 1e-6);
    }
}

TEST_CASE("3-dim Gaussian pairs match an iterative square-root oracle") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto m1 = random_vec(3, rng), m2 = random_vec(3, rng);
        auto s1 = random_spd(3, rng), s2 = random_spd(3, rng);
        const double want = oracle::frechet(m1, s1, m2, s2);
        const double got = fid(stats_of(m1, s1), stats_of(m2, s2));
        REQUIRE(oracle::rel_err(got, want) < 1e-8);
    }
}

TEST_CASE("symmetry and nonnegativity") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = stats_of(random_vec(6, rng), random_spd(6, rng, 1e-3));
        auto b = stats_of(random_vec(6, rng), random_spd(6, rng, 1e-3));
        const double ab = fid(a, b), ba = fid(b, a);
        REQUIRE(ab >= 0.0);
        REQUIRE(std::abs(ab - ba) <= 1e-8 * std::max(1.0, ab));
    }
}

TEST_CASE("rank-deficient covariances are clamped, not rejected") {
    Eigen::MatrixXd low = Eigen::MatrixXd::Zero(3, 3);
    low(0, 0) = 1.0;
    auto a = stats_of(Eigen::VectorXd::Zero(3), low);
    CHECK(std::abs(fid(a, a)) <= 1e-6);
    Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(sqrtm_psd(neg), NumericalError);
}

TEST_CASE("errors") {
    auto a = stats_of(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
    auto b = stats_of(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_AS(fid(a, b), ShapeError);
    auto c = a;
    c.mean[0] = std::nan("");
    CHECK_THROWS_AS(fid(a, c), NumericalError);
}

}

TEST_SUITE("inception_score") {

TEST_CASE("closed-form cases") {
    Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(10, 4, 0.25);
    CHECK(inception_score(uniform) == doctest::Approx(1.0).epsilon(1e-12));
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(6, 3);
    for (int i = 0; i < 6; ++i) onehot(i, i % 3) = 1.0;
    CHECK(std::abs(inception_score(onehot) - 3.0) < 1e-12);
}

TEST_CASE("mixed 3-class case matches direct KL summation") {
    std::vector<std::vector<double>> rows = {{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6}, {0.5, 0.5, 0.0}};
    Eigen::MatrixXd p(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) p(i, j) = rows[i][j];
    CHECK(oracle::rel_err(inception_score(p), oracle::inception_score_direct(rows)) < 1e-12);
}

TEST_CASE("bounds hold on random rows") {
    std::mt19937_64 rng(5);
    std::gamma_distribution<double> g(0.3, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + trial % 9;
        Eigen::MatrixXd p(17, k);
        for (int i = 0; i < 17; ++i) {
            for (int j = 0; j < k; ++j) p(i, j) = g(rng) + 1e-12;
            p.row(i) /= p.row(i).sum();
        }
        const double is = inception_score(p);
        REQUIRE(is >= 1.0);
        REQUIRE(is <= k);
    }
}

TEST_CASE("invalid rows") {
    Eigen::MatrixXd p(1, 2);
    p << 0.7, 0.7;
    CHECK_THROWS_AS(inception_score(p), DomainError);
    p << 1.2, -0.2;
    CHECK_THROWS_AS(inception_score(p), DomainError);
}

}

TEST_SUITE("stats") {

TEST_CASE("streaming statistics agree with a two-pass computation") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(3.0, 2.0);
    const int count = 500, d = 7;
    Eigen::MatrixXd x(count, d);
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = n(rng) + 0.5 * j * (j % 2 ? x(i, 0) : 1.0);
    StatsAccumulator acc(d);
    for (int i = 0; i < count; ++i) acc.add(Eigen::VectorXd(x.row(i).transpose()));
    auto s = acc.finalize();
    Eigen::VectorXd mean = x.colwise().mean().transpose();
    Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / (count - 1);
    CHECK(s.count == count);
    CHECK((s.mean - mean).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s.cov - cov).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);

    StatsAccumulator left(d), right(d);
    for (int i = 0; i < count; ++i) (i < 123 ? left : right).add(Eigen::VectorXd(x.row(i).transpose()));
    left.merge(right);
    auto merged = left.finalize();
    CHECK((merged.cov - cov).cwiseAbs().maxCoeff() < 1e-6);

    auto t = torch::from_blob(x.data(), {d, count}, torch::kDouble).t().contiguous();
    StatsAccumulator from_tensor(d);
    from_tensor.add(t);
    CHECK((from_tensor.finalize().cov - cov).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("extractor statistics are deterministic and self-distance is zero") {
    torch::manual_seed(0);
    ExtractorConfig cfg;
    cfg.width = 4;
    cfg.feature_dim = 6;
    FeatureExtractor ex(cfg, 12);
    ex->eval();
    auto images = corpus_images(24, 11);
    auto a = extract_stats(ex, images, ResampleKernel::bicubic, 8);
    auto b = extract_stats(ex, images, ResampleKernel::bicubic, 5);
    CHECK(a.count == 24);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(fid(a, a)) <= 1e-6);
    auto probs = class_probabilities(ex, images, 8);
    CHECK(probs.sizes() == torch::IntArrayRef({24, 12}));
    CHECK(torch::allclose(probs.sum(1), torch::ones({24}, probs.options()), 1e-5, 1e-5));
}

TEST_CASE("extractor classes are shape-major") {
    SynthSpec spec;
    auto classes = extractor_classes(spec);
    CHECK(classes.size() == 12u);
    CHECK(classes[0] == "red circle");
    CHECK(extractor_label(spec, {{"shape", "square"}, {"color", "green"}}) == 5);
}

}

TEST_SUITE("manipulate") {

TEST_CASE("brightness and contrast formulas") {
    auto px = torch::full({3, 4, 4}, 0.5);
    CHECK(manipulate(px, Manipulation::parse("brightness:+10"), 4)[0][0][0].item<double>() ==
          doctest::Approx(0.55).epsilon(1e-6));
    CHECK(manipulate(px, Manipulation::parse("brightness:-10"), 4)[0][0][0].item<double>() ==
          doctest::Approx(0.45).epsilon(1e-6));
    auto q = torch::full({3, 4, 4}, 0.8);
    CHECK(manipulate(q, Manipulation::parse("contrast:+10"), 4)[1][2][3].item<double>() ==
          doctest::Approx(0.83).epsilon(1e-6));
    CHECK(manipulate(torch::ones({3, 2, 2}), Manipulation::parse("brightness:+10"), 2).max().item<double>() == 1.0);
}

TEST_CASE("palette on a few-color image is the identity") {
    auto img = corpus_images(2, 3)[0];
    auto out = palette_quantize(img, 256);
    CHECK(torch::equal(out, img));
    auto noisy = torch::rand({3, 32, 32});
    auto reduced = palette_quantize(noisy, 16);
    auto flat = (reduced * 255).round().to(torch::kLong);
    auto code = flat[0] * 65536 + flat[1] * 256 + flat[2];
    CHECK(std::get<0>(at::_unique(code.flatten())).numel() <= 16);
}

TEST_CASE("JPEG re-encoding changes fewer pixels than the first pass") {
    auto images = corpus_images(12, 4);
    int64_t first = 0, second = 0;
    for (int64_t i = 0; i < images.size(0); ++i) {
        auto img = images[i];
        auto once = jpeg_roundtrip(img, 95);
        auto twice = jpeg_roundtrip(once, 95);
        auto q = [](const torch::Tensor& t) { return (t * 255).round(); };
        first += (q(once) != q(img)).sum().item<int64_t>();
        second += (q(twice) != q(once)).sum().item<int64_t>();
    }
    CHECK(first > 0);
    CHECK(second < first);
}

TEST_CASE("JPEG quality tables") {
    auto t50 = jpeg_quant_table(false, 50);
    CHECK(t50[0] == 16);
    CHECK(t50[63] == 99);
    auto t100 = jpeg_quant_table(true, 100);
    for (int v : t100) CHECK(v == 1);
    CHECK(jpeg_quant_table(false, 10)[0] > jpeg_quant_table(false, 90)[0]);
}

TEST_CASE("every manipulation keeps shape and range") {
    auto img = torch::rand({3, 64, 64});
    for (const char* s : {"identity", "jpeg:50", "jpeg:95", "palette:256", "brightness:+10", "brightness:-10",
                          "contrast:+10", "contrast:-10"}) {
        auto out = manipulate(img, Manipulation::parse(s), 48);
        REQUIRE(out.sizes() == img.sizes());
        REQUIRE(out.min().item<double>() >= 0.0);
        REQUIRE(out.max().item<double>() <= 1.0);
    }
    for (const char* s : {"resample:nearest", "resample:bilinear"}) {
        auto out = manipulate(img, Manipulation::parse(s), 48);
        CHECK(out.sizes() == torch::IntArrayRef({3, 48, 48}));
        CHECK(out.min().item<double>() >= 0.0);
        CHECK(out.max().item<double>() <= 1.0);
    }
}

TEST_CASE("spec parsing and validation") {
    CHECK(Manipulation::parse("jpeg:70").label() == "jpeg:70");
    CHECK(Manipulation::parse("contrast:-10").label() == "contrast:-10");
    CHECK(Manipulation::parse("brightness:10").label() == "brightness:+10");
    CHECK(Manipulation::parse("resample:nearest").label() == "resample:nearest");
    CHECK_THROWS_AS(Manipulation::parse("jpeg:0"), DomainError);
    CHECK_THROWS_AS(Manipulation::parse("jpeg:101"), DomainError);
    CHECK_THROWS_AS(Manipulation::parse("brightness:150"), DomainError);
    CHECK_THROWS_AS(Manipulation::parse("blur:3"), DomainError);
}

TEST_CASE("identity audit row is zero") {
    torch::manual_seed(1);
    ExtractorConfig cfg;
    cfg.width = 4;
    cfg.feature_dim = 6;
    FeatureExtractor ex(cfg, 12);
    ex->eval();
    auto images = corpus_images(16, 5);
    auto report = fid_audit(ex, images, {Manipulation::parse("identity"), Manipulation::parse("jpeg:50")}, "v0", 8);
    REQUIRE(report.rows.size() == 2u);
    CHECK(std::abs(report.rows[0].fid) <= 1e-6);
    CHECK(report.rows[1].fid > 0.0);
    CHECK(report.to_csv().rfind("spec,fid,n,extractor_version\n", 0) == 0);
    CHECK(report.to_json()["rows"][1]["spec"] == "jpeg:50");
    CHECK_THROWS(fid_audit(ex, images.slice(0, 0, 0), {Manipulation{}}, "v0"));
}

TEST_CASE("default audit list") {
    EvalConfig cfg;
    std::vector<std::string> labels;
    for (const auto& m : default_audit_specs(cfg)) labels.push_back(m.label());
    CHECK(labels.front() == "identity");
    CHECK(std::count(labels.begin(), labels.end(), "jpeg:50") == 1);
    CHECK(std::count(labels.begin(), labels.end(), "resample:nearest") == 1);
    CHECK(std::count(labels.begin(), labels.end(), "contrast:-10") == 1);
}

}

TEST_SUITE("statistics") {

TEST_CASE("binomial upper tail against direct summation") {
    auto direct = [](int k, int n, double p) {
        double s = 0.0;
        for (int i = k; i <= n; ++i) {
            double c = 1.0;
            for (int j = 0; j < i; ++j) c = c * (n - j) / (j + 1);
            s += c * std::pow(p, i) * std::pow(1 - p, n - i);
        }
        return s;
    };
    for (auto [k, n, p] : std::vector<std::tuple<int, int, double>>{{0, 10, 0.3}, {3, 10, 0.3}, {20, 64, 0.1}, {64, 64, 0.5}}) {
        CHECK(oracle::rel_err(binomial_upper_tail(k, n, p), direct(k, n, p)) < 1e-10);
    }
    CHECK(binomial_upper_tail(11, 10, 0.5) == 0.0);
    CHECK_THROWS_AS(binomial_upper_tail(1, 10, 1.5), DomainError);
}

TEST_CASE("red dominance") {
    auto red = torch::zeros({3, 8, 8});
    red[0].fill_(0.9);
    CHECK(red_dominant(red));
    CHECK_FALSE(red_dominant(torch::full({3, 8, 8}, 0.9)));
    CHECK_THROWS_AS(red_dominant(torch::zeros({8, 8})), ShapeError);
}

}
