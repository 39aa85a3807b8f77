#include "wurstkit/evalkit.hpp"

#include "wurstkit/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

namespace wurstkit {

// ---- feature statistics -------------------------------------------------

StatsAccumulator::StatsAccumulator(int64_t dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {
    if (dim < 1) throw ShapeError("feature dimension must be >= 1");
}

void StatsAccumulator::add(const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() != mean_.size()) throw ShapeError("feature dimension mismatch");
    if (!x.allFinite()) throw NumericalError("non-finite feature vector");
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_.noalias() += delta * (x - mean_).transpose();
}

void StatsAccumulator::add(const torch::Tensor& rows) {
    if (rows.dim() != 2 || rows.size(1) != mean_.size()) throw ShapeError("expected [N, d] features");
    auto r = rows.detach().to(torch::kCPU, torch::kDouble).contiguous();
    const double* p = r.data_ptr<double>();
    for (int64_t i = 0; i < r.size(0); ++i) add(Eigen::Map<const Eigen::VectorXd>(p + i * r.size(1), r.size(1)));
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    if (other.mean_.size() != mean_.size()) throw ShapeError("feature dimension mismatch");
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_), n = na + nb;
    const Eigen::VectorXd delta = other.mean_ - mean_;
    mean_ += delta * (nb / n);
    m2_ += other.m2_ + delta * delta.transpose() * (na * nb / n);
    n_ += other.n_;
}

FeatureStats StatsAccumulator::finalize() const {
    if (n_ < 2) throw PreconditionError("feature statistics need at least two samples");
    FeatureStats s;
    s.mean = mean_;
    s.cov = (m2_ + m2_.transpose()) / (2.0 * static_cast<double>(n_ - 1));
    s.count = n_;
    return s;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = -1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < tol) throw NumericalError("matrix is not positive semi-definite");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double fid(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim())
        throw ShapeError("fid: feature dimensions differ");
    if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite())
        throw NumericalError("fid: non-finite statistics");
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const Eigen::MatrixXd s1 = sqrtm_psd(a.cov);
    const Eigen::MatrixXd cross = sqrtm_psd(s1 * b.cov * s1);
    const double value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    return std::max(value, 0.0);
}

double inception_score(const Eigen::MatrixXd& probs) {
    if (probs.rows() < 1 || probs.cols() < 1) throw ShapeError("inception_score: empty probability matrix");
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if ((probs.row(i).array() < 0.0).any() || !probs.row(i).allFinite())
            throw DomainError("inception_score: rows must be probability vectors");
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) throw DomainError("inception_score: row does not sum to 1");
    }
    const Eigen::RowVectorXd marginal = probs.colwise().mean();
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
            const double p = probs(i, k);
            if (p > 0.0) total += p * (std::log(p) - std::log(marginal[k]));
        }
    const double is = std::exp(total / static_cast<double>(probs.rows()));
    return std::clamp(is, 1.0, static_cast<double>(probs.cols()));
}

// ---- extractor ------------------------------------------------------------

FeatureExtractorImpl::FeatureExtractorImpl(const ExtractorConfig& cfg, int64_t classes) : cfg(cfg), classes(classes) {
    if (classes < 2) throw ShapeError("extractor needs at least two classes");
    if (cfg.input_size < 8 || cfg.width < 1 || cfg.feature_dim < 1) throw ShapeError("invalid extractor config");
    const int64_t w = cfg.width;
    torch::nn::Sequential seq;
    auto stage = [&](int64_t in, int64_t out, int64_t stride) {
        seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
        seq->push_back(torch::nn::BatchNorm2d(out));
        seq->push_back(torch::nn::GELU());
    };
    stage(3, w, 1);
    stage(w, 2 * w, 2);
    stage(2 * w, 4 * w, 2);
    stage(4 * w, 4 * w, 2);
    seq->push_back(torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions({1, 1})));
    seq->push_back(torch::nn::Flatten());
    body = register_module("body", seq);
    to_features = register_module("to_features", torch::nn::Linear(4 * w, cfg.feature_dim));
    head = register_module("head", torch::nn::Linear(cfg.feature_dim, classes));
}

torch::Tensor FeatureExtractorImpl::prepare(const torch::Tensor& images, ResampleKernel kernel) const {
    if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("extractor: expected [B, 3, H, W]");
    if (images.size(2) == cfg.input_size && images.size(3) == cfg.input_size) return images;
    return resample(images, cfg.input_size, cfg.input_size, kernel).clamp(0.0, 1.0);
}

torch::Tensor FeatureExtractorImpl::features(const torch::Tensor& prepared) {
    return to_features->forward(body->forward(prepared));
}

torch::Tensor FeatureExtractorImpl::logits_from_features(const torch::Tensor& feats) {
    return head->forward(torch::gelu(feats));
}

std::vector<std::string> extractor_classes(const SynthSpec& spec) {
    std::vector<std::string> out;
    for (const auto& s : spec.shapes)
        for (const auto& c : spec.colors) out.push_back(c + " " + s);
    return out;
}

int64_t extractor_label(const SynthSpec& spec, const nlohmann::json& generator) {
    const auto shape = generator.at("shape").get<std::string>();
    const auto color = generator.at("color").get<std::string>();
    const auto si = std::find(spec.shapes.begin(), spec.shapes.end(), shape);
    const auto ci = std::find(spec.colors.begin(), spec.colors.end(), color);
    if (si == spec.shapes.end() || ci == spec.colors.end()) throw DomainError("record outside the extractor vocabulary");
    return static_cast<int64_t>((si - spec.shapes.begin()) * static_cast<std::ptrdiff_t>(spec.colors.size()) +
                                (ci - spec.colors.begin()));
}

FeatureStats extract_stats(FeatureExtractor& extractor, const torch::Tensor& images, ResampleKernel kernel,
                           int64_t batch) {
    if (images.dim() != 4 || images.size(0) == 0) throw PreconditionError("extract_stats: empty image set");
    torch::NoGradGuard guard;
    extractor->eval();
    StatsAccumulator acc(extractor->cfg.feature_dim);
    for (int64_t s = 0; s < images.size(0); s += batch) {
        auto chunk = images.slice(0, s, std::min(s + batch, images.size(0)));
        acc.add(extractor->features(extractor->prepare(chunk, kernel)));
    }
    return acc.finalize();
}

torch::Tensor class_probabilities(FeatureExtractor& extractor, const torch::Tensor& images, int64_t batch) {
    torch::NoGradGuard guard;
    extractor->eval();
    std::vector<torch::Tensor> out;
    for (int64_t s = 0; s < images.size(0); s += batch) {
        auto chunk = images.slice(0, s, std::min(s + batch, images.size(0)));
        out.push_back(torch::softmax(extractor->forward(extractor->prepare(chunk)).to(torch::kDouble), 1));
    }
    return torch::cat(out);
}

// ---- manipulations -------------------------------------------------------

void Manipulation::validate() const {
    switch (kind) {
        case Kind::jpeg:
            if (!(value >= 1.0 && value <= 100.0) || value != std::floor(value))
                throw DomainError("jpeg quality must be an integer in [1,100]");
            break;
        case Kind::palette:
            if (!(value >= 2.0 && value <= 65536.0)) throw DomainError("palette size must lie in [2, 65536]");
            break;
        case Kind::brightness:
        case Kind::contrast:
            if (!(std::abs(value) <= 100.0)) throw DomainError("brightness/contrast percent must lie in [-100,100]");
            break;
        default:
            break;
    }
}

std::string Manipulation::label() const {
    auto signed_pct = [](double v) {
        std::ostringstream ss;
        ss << (v >= 0 ? "+" : "") << v;
        return ss.str();
    };
    switch (kind) {
        case Kind::identity: return "identity";
        case Kind::jpeg: return "jpeg:" + std::to_string(static_cast<int>(value));
        case Kind::resample:
            return std::string("resample:") +
                   (kernel == ResampleKernel::nearest ? "nearest" : kernel == ResampleKernel::bilinear ? "bilinear" : "bicubic");
        case Kind::palette: return "palette:" + std::to_string(static_cast<int64_t>(value));
        case Kind::brightness: return "brightness:" + signed_pct(value);
        case Kind::contrast: return "contrast:" + signed_pct(value);
    }
    return "identity";
}

Manipulation Manipulation::parse(const std::string& text) {
    Manipulation m;
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    auto number = [&]() {
        try {
            size_t used = 0;
            const double v = std::stod(arg, &used);
            if (used != arg.size()) throw std::invalid_argument(arg);
            return v;
        } catch (const std::exception&) {
            throw DomainError("manipulation '" + text + "': bad numeric argument");
        }
    };
    if (kind == "identity" && arg.empty()) m.kind = Kind::identity;
    else if (kind == "jpeg") m = {Kind::jpeg, number()};
    else if (kind == "palette") m = {Kind::palette, arg.empty() ? 256.0 : number()};
    else if (kind == "brightness") m = {Kind::brightness, number()};
    else if (kind == "contrast") m = {Kind::contrast, number()};
    else if (kind == "resample") {
        m.kind = Kind::resample;
        if (arg == "nearest") m.kernel = ResampleKernel::nearest;
        else if (arg == "bilinear") m.kernel = ResampleKernel::bilinear;
        else if (arg == "bicubic") m.kernel = ResampleKernel::bicubic;
        else throw DomainError("resample kernel must be nearest, bilinear or bicubic");
    } else {
        throw DomainError("unknown manipulation '" + text + "'");
    }
    m.validate();
    return m;
}

torch::Tensor manipulate(const torch::Tensor& image, const Manipulation& spec, int64_t target_size) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("manipulate: expected [3, H, W]");
    spec.validate();
    using K = Manipulation::Kind;
    switch (spec.kind) {
        case K::identity: return image.clone();
        case K::jpeg: return jpeg_roundtrip(image, static_cast<int>(spec.value));
        case K::palette: return palette_quantize(image, static_cast<int64_t>(spec.value));
        case K::brightness: return (image * (1.0 + spec.value / 100.0)).clamp(0.0, 1.0);
        case K::contrast: return ((image - 0.5) * (1.0 + spec.value / 100.0) + 0.5).clamp(0.0, 1.0);
        case K::resample:
            if (target_size < 1) throw ShapeError("resample target must be >= 1");
            return resample(image.unsqueeze(0), target_size, target_size, spec.kernel).squeeze(0).clamp(0.0, 1.0);
    }
    throw DomainError("unknown manipulation");
}

// ---- JPEG round trip -----------------------------------------------------

namespace {

constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24,  40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55,  64,
    81, 104, 113, 92, 49, 64,  78,  87,  103, 121, 120, 101, 72, 92,  95,  98,  112, 100, 103, 99};

constexpr std::array<int, 64> kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

struct DctBasis {
    double c[8][8];
    DctBasis() {
        const double pi = 3.14159265358979323846;
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x)
                c[u][x] = (u == 0 ? std::sqrt(0.5) : 1.0) * 0.5 * std::cos((2 * x + 1) * u * pi / 16.0);
    }
};

const DctBasis& basis() {
    static const DctBasis b;
    return b;
}

uint8_t to_byte(double v) { return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Quantizes one plane (w x h, both multiples of 8) in place.
void code_plane(std::vector<double>& plane, int64_t w, int64_t h, const std::array<int, 64>& q) {
    const auto& b = basis();
    double block[8][8], coef[8][8], tmp[8][8];
    for (int64_t by = 0; by < h; by += 8)
        for (int64_t bx = 0; bx < w; bx += 8) {
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) block[y][x] = plane[static_cast<size_t>((by + y) * w + bx + x)] - 128.0;
            for (int v = 0; v < 8; ++v)
                for (int x = 0; x < 8; ++x) {
                    double s = 0;
                    for (int y = 0; y < 8; ++y) s += b.c[v][y] * block[y][x];
                    tmp[v][x] = s;
                }
            for (int v = 0; v < 8; ++v)
                for (int u = 0; u < 8; ++u) {
                    double s = 0;
                    for (int x = 0; x < 8; ++x) s += b.c[u][x] * tmp[v][x];
                    const int qq = q[static_cast<size_t>(v * 8 + u)];
                    coef[v][u] = std::round(s / qq) * qq;
                }
            for (int y = 0; y < 8; ++y)
                for (int u = 0; u < 8; ++u) {
                    double s = 0;
                    for (int v = 0; v < 8; ++v) s += b.c[v][y] * coef[v][u];
                    tmp[y][u] = s;
                }
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    double s = 0;
                    for (int u = 0; u < 8; ++u) s += b.c[u][x] * tmp[y][u];
                    plane[static_cast<size_t>((by + y) * w + bx + x)] = to_byte(s + 128.0);
                }
        }
}

}  // namespace

std::array<int, 64> jpeg_quant_table(bool chroma, int quality) {
    if (quality < 1 || quality > 100) throw DomainError("jpeg quality must lie in [1,100]");
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    const auto& base = chroma ? kChromaTable : kLumaTable;
    std::array<int, 64> out{};
    for (size_t i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
    return out;
}

torch::Tensor jpeg_roundtrip(const torch::Tensor& image, int quality) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("jpeg: expected [3, H, W]");
    const auto ql = jpeg_quant_table(false, quality), qc = jpeg_quant_table(true, quality);
    const int64_t h = image.size(1), w = image.size(2);
    const int64_t ph = (h + 15) / 16 * 16, pw = (w + 15) / 16 * 16;
    auto u8 = image.detach().to(torch::kCPU, torch::kFloat).clamp(0.0, 1.0).mul(255.0).round().contiguous();
    auto px = u8.accessor<float, 3>();

    std::vector<double> Y(static_cast<size_t>(ph * pw)), Cb(Y.size()), Cr(Y.size());
    for (int64_t y = 0; y < ph; ++y)
        for (int64_t x = 0; x < pw; ++x) {
            const int64_t sy = std::min(y, h - 1), sx = std::min(x, w - 1);
            const double r = px[0][sy][sx], g = px[1][sy][sx], b = px[2][sy][sx];
            const size_t i = static_cast<size_t>(y * pw + x);
            Y[i] = to_byte(0.299 * r + 0.587 * g + 0.114 * b);
            Cb[i] = to_byte(-0.168736 * r - 0.331264 * g + 0.5 * b + 128.0);
            Cr[i] = to_byte(0.5 * r - 0.418688 * g - 0.081312 * b + 128.0);
        }
    // 4:2:0: 2x2 box average, then box replication on the way back.
    const int64_t ch = ph / 2, cw = pw / 2;
    std::vector<double> sCb(static_cast<size_t>(ch * cw)), sCr(sCb.size());
    for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x) {
            double a = 0, c = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const size_t i = static_cast<size_t>((2 * y + dy) * pw + 2 * x + dx);
                    a += Cb[i];
                    c += Cr[i];
                }
            sCb[static_cast<size_t>(y * cw + x)] = to_byte(a / 4.0);
            sCr[static_cast<size_t>(y * cw + x)] = to_byte(c / 4.0);
        }
    code_plane(Y, pw, ph, ql);
    code_plane(sCb, cw, ch, qc);
    code_plane(sCr, cw, ch, qc);

    auto out = torch::empty({3, h, w}, torch::kFloat);
    auto o = out.accessor<float, 3>();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double yy = Y[static_cast<size_t>(y * pw + x)];
            const double cb = sCb[static_cast<size_t>((y / 2) * cw + x / 2)] - 128.0;
            const double cr = sCr[static_cast<size_t>((y / 2) * cw + x / 2)] - 128.0;
            o[0][y][x] = to_byte(yy + 1.402 * cr) / 255.0f;
            o[1][y][x] = to_byte(yy - 0.344136 * cb - 0.714136 * cr) / 255.0f;
            o[2][y][x] = to_byte(yy + 1.772 * cb) / 255.0f;
        }
    return out;
}

// ---- palette -------------------------------------------------------------

torch::Tensor palette_quantize(const torch::Tensor& image, int64_t colors) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("palette: expected [3, H, W]");
    if (colors < 2) throw DomainError("palette size must be >= 2");
    using Color = std::array<float, 3>;
    auto img = image.detach().to(torch::kCPU, torch::kFloat).contiguous();
    const int64_t n = img.size(1) * img.size(2);
    const float* p = img.data_ptr<float>();
    std::map<Color, int64_t> hist;
    for (int64_t i = 0; i < n; ++i) ++hist[{p[i], p[n + i], p[2 * n + i]}];
    if (static_cast<int64_t>(hist.size()) <= colors) return image.clone();

    struct Entry {
        Color c;
        int64_t count;
    };
    std::vector<Entry> entries;
    entries.reserve(hist.size());
    for (const auto& [c, k] : hist) entries.push_back({c, k});
    // Boxes are index ranges into `entries`.
    struct Box {
        size_t lo, hi;
    };
    auto range_of = [&](const Box& b, int ch) {
        float mn = entries[b.lo].c[ch], mx = mn;
        for (size_t i = b.lo; i < b.hi; ++i) {
            mn = std::min(mn, entries[i].c[ch]);
            mx = std::max(mx, entries[i].c[ch]);
        }
        return mx - mn;
    };
    std::vector<Box> boxes = {{0, entries.size()}};
    while (static_cast<int64_t>(boxes.size()) < colors) {
        // Split the box with the widest channel range.
        size_t best = boxes.size();
        int best_ch = 0;
        float best_range = 0.0f;
        for (size_t b = 0; b < boxes.size(); ++b) {
            if (boxes[b].hi - boxes[b].lo < 2) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const float r = range_of(boxes[b], ch);
                if (r > best_range) {
                    best_range = r;
                    best = b;
                    best_ch = ch;
                }
            }
        }
        if (best == boxes.size()) break;
        Box box = boxes[best];
        std::stable_sort(entries.begin() + static_cast<std::ptrdiff_t>(box.lo),
                         entries.begin() + static_cast<std::ptrdiff_t>(box.hi),
                         [&](const Entry& a, const Entry& b) { return a.c[best_ch] < b.c[best_ch]; });
        int64_t total = 0;
        for (size_t i = box.lo; i < box.hi; ++i) total += entries[i].count;
        int64_t acc = 0;
        size_t cut = box.lo + 1;
        for (size_t i = box.lo; i < box.hi - 1; ++i) {
            acc += entries[i].count;
            cut = i + 1;
            if (2 * acc >= total) break;
        }
        boxes[best] = {box.lo, cut};
        boxes.push_back({cut, box.hi});
    }
    std::map<Color, Color> mapping;
    for (const auto& b : boxes) {
        double sum[3] = {0, 0, 0};
        int64_t k = 0;
        for (size_t i = b.lo; i < b.hi; ++i) {
            for (int ch = 0; ch < 3; ++ch) sum[ch] += static_cast<double>(entries[i].c[ch]) * entries[i].count;
            k += entries[i].count;
        }
        const Color mean = {static_cast<float>(sum[0] / k), static_cast<float>(sum[1] / k), static_cast<float>(sum[2] / k)};
        for (size_t i = b.lo; i < b.hi; ++i) mapping[entries[i].c] = mean;
    }
    auto out = torch::empty_like(img);
    float* q = out.data_ptr<float>();
    for (int64_t i = 0; i < n; ++i) {
        const auto& c = mapping.at({p[i], p[n + i], p[2 * n + i]});
        q[i] = c[0];
        q[n + i] = c[1];
        q[2 * n + i] = c[2];
    }
    return out;
}

// ---- audit ---------------------------------------------------------------

std::string AuditReport::to_csv() const {
    std::ostringstream ss;
    ss.precision(9);
    ss << "spec,fid,n,extractor_version\n";
    for (const auto& r : rows) ss << r.spec << ',' << r.fid << ',' << r.n << ',' << extractor_version << '\n';
    return ss.str();
}

nlohmann::json AuditReport::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back({{"spec", r.spec}, {"fid", r.fid}, {"n", r.n}});
    return {{"extractor_version", extractor_version}, {"rows", arr}};
}

AuditReport fid_audit(FeatureExtractor& extractor, const torch::Tensor& images,
                      const std::vector<Manipulation>& specs, const std::string& extractor_version, int64_t batch) {
    if (images.dim() != 4 || images.size(0) < 2) throw PreconditionError("fid_audit: corpus needs at least two images");
    const auto reference = extract_stats(extractor, images, ResampleKernel::bicubic, batch);
    AuditReport report;
    report.extractor_version = extractor_version;
    for (const auto& spec : specs) {
        FeatureStats stats;
        if (spec.kind == Manipulation::Kind::resample) {
            stats = extract_stats(extractor, images, spec.kernel, batch);
        } else {
            std::vector<torch::Tensor> out;
            out.reserve(static_cast<size_t>(images.size(0)));
            for (int64_t i = 0; i < images.size(0); ++i)
                out.push_back(manipulate(images[i], spec, extractor->cfg.input_size));
            stats = extract_stats(extractor, torch::stack(out), ResampleKernel::bicubic, batch);
        }
        report.rows.push_back({spec.label(), fid(reference, stats), images.size(0)});
    }
    return report;
}

std::vector<Manipulation> default_audit_specs(const EvalConfig& cfg) {
    using K = Manipulation::Kind;
    std::vector<Manipulation> specs = {{K::identity, 0.0}};
    for (auto q : cfg.jpeg_qualities) specs.push_back({K::jpeg, static_cast<double>(q)});
    specs.push_back({K::resample, 0.0, ResampleKernel::nearest});
    specs.push_back({K::resample, 0.0, ResampleKernel::bilinear});
    specs.push_back({K::palette, 256.0});
    specs.push_back({K::brightness, cfg.brightness_percent});
    specs.push_back({K::brightness, -cfg.brightness_percent});
    specs.push_back({K::contrast, cfg.contrast_percent});
    specs.push_back({K::contrast, -cfg.contrast_percent});
    for (auto& s : specs) s.validate();
    return specs;
}

double binomial_upper_tail(int64_t k, int64_t n, double p) {
    if (n < 0 || k < 0) throw DomainError("binomial: counts must be >= 0");
    require_rate(p, "binomial p");
    if (k == 0) return 1.0;
    if (k > n) return 0.0;
    double tail = 0.0;
    for (int64_t i = k; i <= n; ++i) {
        const double log_term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                                (i > 0 ? i * std::log(p) : 0.0) + (n - i > 0 ? (n - i) * std::log1p(-p) : 0.0);
        tail += std::exp(log_term);
    }
    return std::min(tail, 1.0);
}

bool red_dominant(const torch::Tensor& image, double min_fraction) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("red_dominant: expected [3, H, W]");
    auto r = image[0], g = image[1], b = image[2];
    auto red = (r > 0.5).logical_and((r - torch::max(g, b)) > 0.35);
    return red.to(torch::kDouble).mean().item<double>() >= min_fraction;
}

}  // namespace wurstkit
