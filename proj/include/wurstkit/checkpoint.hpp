#pragma once

#include "json.hpp"
#include <torch/torch.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace wurstkit {

inline constexpr int kCheckpointFormatVersion = 1;

// File layout (all integers little-endian):
//   8 bytes  magic "WKCKPT01"
//   u64      manifest length n
//   n bytes  manifest JSON
//   tensors  raw f32 data, concatenated in manifest order (sorted by name)
//
// The manifest carries format_version, tensors [{name, shape, offset}] and
// tensor_sha256 over the whole tensor section, next to free-form fields
// (stage, config, step, rng, provenance).
struct Checkpoint {
    nlohmann::json manifest = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;

    std::string serialize() const;
    static Checkpoint parse(std::string_view bytes);

    const torch::Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    int64_t step() const { return manifest.value("step", int64_t{0}); }
    std::string stage() const { return manifest.value("stage", std::string()); }
};

// Temp-file-plus-rename writer. Until commit() the final path is untouched;
// destroying an uncommitted file removes the temporary.
class AtomicFile {
public:
    explicit AtomicFile(std::filesystem::path target);
    ~AtomicFile();
    AtomicFile(const AtomicFile&) = delete;
    AtomicFile& operator=(const AtomicFile&) = delete;

    void write(std::string_view bytes);
    void commit();
    const std::filesystem::path& temp_path() const { return temp_; }

private:
    std::filesystem::path target_, temp_;
    std::FILE* file_ = nullptr;
    bool committed_ = false;
};

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);

// (1 - lambda) * a + lambda * b per tensor. Training-state tensors ("optim."
// and "train." prefixes) are dropped; the manifest records both inputs.
Checkpoint interpolate_weights(const Checkpoint& a, const Checkpoint& b, double lambda);

// Parameters and buffers of a module under "<prefix><dotted name>", as f32.
void export_module(const torch::nn::Module& module, const std::string& prefix,
                   std::map<std::string, torch::Tensor>& out);
// Strict inverse of export_module: every parameter and buffer must be present
// with a matching shape.
void import_module(torch::nn::Module& module, const std::string& prefix,
                   const std::map<std::string, torch::Tensor>& in);

}  // namespace wurstkit
