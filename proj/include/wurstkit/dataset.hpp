#pragma once

#include "json.hpp"
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wurstkit {

// Vocabulary of the procedural shapes corpus.
struct SynthSpec {
    std::vector<std::string> shapes = {"circle", "square", "triangle"};
    std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
    std::vector<std::string> sizes = {"small", "large"};
    std::vector<std::string> backgrounds = {"white", "gray"};
    int64_t count = 1000;
    int64_t image_size = 64;
    // Fraction of captions in the short "<color> <shape>" form; the rest read
    // "<size> <color> <shape> on <background>".
    double short_caption_rate = 0.3;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct DatasetRecord {
    std::string key;
    std::string caption;
    // Exactly one of image_path / generator is set.
    std::string image_path;
    nlohmann::json generator;
};

struct DatasetManifest {
    std::vector<DatasetRecord> records;
    // Relative image paths resolve against this directory.
    std::filesystem::path base_dir;
};

DatasetManifest synth_dataset(const SynthSpec& spec, uint64_t seed);

// RGB values of the named colors.
std::array<float, 3> color_rgb(const std::string& name);

// Renders a generator record: [3, S, S] in [0,1], 4x4 supersampled edges.
torch::Tensor render_synthetic(const nlohmann::json& generator);

std::string manifest_to_jsonl(const DatasetManifest& m);
DatasetManifest manifest_from_jsonl(const std::string& text, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Image folder ingestion: every .png/.jpg/.jpeg file, captioned by a sibling
// .txt file when present, otherwise by the file stem with '_' as spaces.
DatasetManifest ingest_image_folder(const std::filesystem::path& dir);

struct LoadedDataset {
    torch::Tensor images;  // [N, 3, S, S]
    std::vector<std::string> captions;
    std::vector<std::string> keys;
    std::vector<nlohmann::json> generators;

    int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

// Renders or reads every record, resizing file images to S x S (bicubic).
LoadedDataset load_dataset(const DatasetManifest& m, int64_t image_size);

}  // namespace wurstkit
