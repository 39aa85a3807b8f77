#include "wurstkit/dataset.hpp"

#include "wurstkit/checkpoint.hpp"
#include "wurstkit/errors.hpp"
#include "wurstkit/image_io.hpp"
#include "wurstkit/resize.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace wurstkit {

namespace {

constexpr double kPi = 3.14159265358979323846;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[std::uniform_int_distribution<size_t>(0, v.size() - 1)(rng)];
}

bool inside(const std::string& shape, double x, double y, double r, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * x + s * y, v = -s * x + c * y;
    if (shape == "circle") return u * u + v * v <= r * r;
    if (shape == "square") return std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r;
    if (shape == "triangle") {
        // Equilateral, circumradius r, one vertex pointing up before rotation.
        for (int k = 0; k < 3; ++k) {
            const double a = kPi / 2.0 + 2.0 * kPi * k / 3.0 + kPi;  // edge normal opposite each vertex
            if (u * std::cos(a) + v * std::sin(a) > 0.5 * r) return false;
        }
        return true;
    }
    throw DomainError("unknown shape '" + shape + "'");
}

}  // namespace

void SynthSpec::validate() const {
    if (shapes.empty() || colors.empty() || sizes.empty() || backgrounds.empty())
        throw DomainError("synth spec: every vocabulary must be non-empty");
    for (const auto& s : shapes)
        if (s != "circle" && s != "square" && s != "triangle") throw DomainError("synth spec: unknown shape '" + s + "'");
    for (const auto& s : sizes)
        if (s != "small" && s != "large") throw DomainError("synth spec: unknown size '" + s + "'");
    for (const auto& c : colors) color_rgb(c);
    for (const auto& c : backgrounds) color_rgb(c);
    if (count < 1) throw DomainError("synth spec: count must be >= 1");
    if (image_size < 8) throw DomainError("synth spec: image size must be >= 8");
    require_rate(short_caption_rate, "short caption rate");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = {{"shapes", s.shapes},   {"colors", s.colors},         {"sizes", s.sizes},
         {"backgrounds", s.backgrounds}, {"count", s.count}, {"image_size", s.image_size},
         {"short_caption_rate", s.short_caption_rate}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
    static const std::vector<std::string> known = {"shapes", "colors", "sizes", "backgrounds",
                                                   "count", "image_size", "short_caption_rate"};
    if (!j.is_object()) throw FormatError("synth spec must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end()) throw FormatError("synth spec: unknown key '" + k + "'");
    try {
        if (j.contains("shapes")) j.at("shapes").get_to(s.shapes);
        if (j.contains("colors")) j.at("colors").get_to(s.colors);
        if (j.contains("sizes")) j.at("sizes").get_to(s.sizes);
        if (j.contains("backgrounds")) j.at("backgrounds").get_to(s.backgrounds);
        if (j.contains("count")) j.at("count").get_to(s.count);
        if (j.contains("image_size")) j.at("image_size").get_to(s.image_size);
        if (j.contains("short_caption_rate")) j.at("short_caption_rate").get_to(s.short_caption_rate);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("synth spec: ") + e.what());
    }
}

std::array<float, 3> color_rgb(const std::string& name) {
    if (name == "red") return {0.85f, 0.12f, 0.12f};
    if (name == "green") return {0.15f, 0.65f, 0.20f};
    if (name == "blue") return {0.15f, 0.30f, 0.85f};
    if (name == "yellow") return {0.95f, 0.85f, 0.15f};
    if (name == "white") return {1.0f, 1.0f, 1.0f};
    if (name == "gray") return {0.5f, 0.5f, 0.5f};
    if (name == "black") return {0.0f, 0.0f, 0.0f};
    throw DomainError("unknown color '" + name + "'");
}

DatasetManifest synth_dataset(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    DatasetManifest m;
    m.records.reserve(static_cast<size_t>(spec.count));
    for (int64_t i = 0; i < spec.count; ++i) {
        const auto& shape = pick(rng, spec.shapes);
        const auto& color = pick(rng, spec.colors);
        const auto& size = pick(rng, spec.sizes);
        const auto& bg = pick(rng, spec.backgrounds);
        const double r = size == "small" ? uniform(rng, 0.14, 0.20) : uniform(rng, 0.28, 0.36);
        const double margin = r + 0.04;
        const double cx = uniform(rng, margin, 1.0 - margin), cy = uniform(rng, margin, 1.0 - margin);
        const double angle = shape == "circle" ? 0.0 : uniform(rng, 0.0, 2.0 * kPi);
        const bool short_caption = uniform(rng, 0.0, 1.0) < spec.short_caption_rate;

        DatasetRecord rec;
        char key[32];
        std::snprintf(key, sizeof(key), "synth-%06lld", static_cast<long long>(i));
        rec.key = key;
        rec.caption = short_caption ? color + " " + shape : size + " " + color + " " + shape + " on " + bg;
        rec.generator = {{"shape", shape}, {"color", color},   {"size", size},   {"background", bg},
                         {"cx", cx},       {"cy", cy},         {"radius", r},    {"angle", angle},
                         {"image_size", spec.image_size}};
        m.records.push_back(std::move(rec));
    }
    return m;
}

torch::Tensor render_synthetic(const nlohmann::json& g) {
    const auto shape = g.at("shape").get<std::string>();
    const auto fg = color_rgb(g.at("color").get<std::string>());
    const auto bg = color_rgb(g.at("background").get<std::string>());
    const double cx = g.at("cx").get<double>(), cy = g.at("cy").get<double>();
    const double r = g.at("radius").get<double>(), angle = g.at("angle").get<double>();
    const int64_t n = g.at("image_size").get<int64_t>();
    if (n < 1) throw FormatError("generator image_size must be >= 1");

    constexpr int kSub = 4;
    auto img = torch::empty({3, n, n}, torch::kFloat);
    auto acc = img.accessor<float, 3>();
    for (int64_t y = 0; y < n; ++y) {
        for (int64_t x = 0; x < n; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSub; ++sy)
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = (static_cast<double>(x) + (sx + 0.5) / kSub) / static_cast<double>(n);
                    const double py = (static_cast<double>(y) + (sy + 0.5) / kSub) / static_cast<double>(n);
                    hits += inside(shape, px - cx, py - cy, r, angle) ? 1 : 0;
                }
            const float c = static_cast<float>(hits) / (kSub * kSub);
            for (int ch = 0; ch < 3; ++ch) acc[ch][y][x] = bg[ch] * (1.0f - c) + fg[ch] * c;
        }
    }
    return img;
}

std::string manifest_to_jsonl(const DatasetManifest& m) {
    std::string out;
    for (const auto& r : m.records) {
        nlohmann::json j = {{"key", r.key}, {"caption", r.caption}};
        if (!r.image_path.empty()) j["image"] = r.image_path;
        else j["generator"] = r.generator;
        out += j.dump();
        out += '\n';
    }
    return out;
}

DatasetManifest manifest_from_jsonl(const std::string& text, const std::filesystem::path& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            DatasetRecord r;
            r.key = j.at("key").get<std::string>();
            r.caption = j.at("caption").get<std::string>();
            const bool has_image = j.contains("image"), has_gen = j.contains("generator");
            if (has_image == has_gen) throw FormatError("record needs exactly one of image/generator");
            if (has_image) r.image_path = j.at("image").get<std::string>();
            else r.generator = j.at("generator");
            m.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    return manifest_from_jsonl(read_file(path), path.parent_path());
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    write_file_atomic(path, manifest_to_jsonl(m));
}

DatasetManifest ingest_image_folder(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw PreconditionError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    DatasetManifest m;
    m.base_dir = dir;
    for (const auto& f : files) {
        DatasetRecord r;
        r.key = f.stem().string();
        r.image_path = f.filename().string();
        auto txt = f;
        txt.replace_extension(".txt");
        if (std::filesystem::exists(txt)) {
            r.caption = read_file(txt);
            while (!r.caption.empty() && (r.caption.back() == '\n' || r.caption.back() == '\r')) r.caption.pop_back();
        } else {
            r.caption = r.key;
            std::replace(r.caption.begin(), r.caption.end(), '_', ' ');
        }
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw PreconditionError("no images found in " + dir.string());
    return m;
}

LoadedDataset load_dataset(const DatasetManifest& m, int64_t image_size) {
    if (m.records.empty()) throw PreconditionError("dataset is empty");
    LoadedDataset d;
    std::vector<torch::Tensor> images;
    images.reserve(m.records.size());
    for (const auto& r : m.records) {
        torch::Tensor img;
        if (!r.image_path.empty()) {
            std::filesystem::path p = r.image_path;
            img = read_image(p.is_absolute() ? p : m.base_dir / p);
        } else {
            img = render_synthetic(r.generator);
        }
        if (img.size(1) != image_size || img.size(2) != image_size)
            img = resize_bicubic(img.unsqueeze(0), image_size, image_size).squeeze(0);
        images.push_back(img);
        d.captions.push_back(r.caption);
        d.keys.push_back(r.key);
        d.generators.push_back(r.generator);
    }
    d.images = torch::stack(images);
    return d;
}

}  // namespace wurstkit
