#include "wurstkit/checkpoint.hpp"

#include "wurstkit/errors.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace wurstkit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'W', 'K', 'C', 'K', 'P', 'T', '0', '1'};

torch::Tensor as_f32(const torch::Tensor& t) {
    return t.detach().to(torch::kCPU, torch::kFloat).contiguous();
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

const torch::Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

std::string Checkpoint::serialize() const {
    std::string data;
    auto index = nlohmann::json::array();
    for (const auto& [name, tensor] : tensors) {
        auto t = as_f32(tensor);
        index.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", data.size()}});
        data.append(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<size_t>(t.numel()) * 4);
    }
    auto m = manifest;
    m["format_version"] = kCheckpointFormatVersion;
    m["tensors"] = std::move(index);
    m["tensor_sha256"] = sha256_hex(data);
    const std::string text = m.dump();

    std::string out(kMagic, sizeof(kMagic));
    const uint64_t n = text.size();
    out.append(reinterpret_cast<const char*>(&n), sizeof(n));
    out += text;
    out += data;
    return out;
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a checkpoint (bad magic)");
    uint64_t n = 0;
    std::memcpy(&n, bytes.data() + 8, sizeof(n));
    if (n > bytes.size() - 16) throw FormatError("checkpoint manifest truncated");
    Checkpoint ck;
    try {
        ck.manifest = nlohmann::json::parse(bytes.substr(16, n));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    if (ck.manifest.value("format_version", 0) != kCheckpointFormatVersion)
        throw FormatError("unsupported checkpoint format version");
    const auto data = bytes.substr(16 + n);
    if (sha256_hex(data) != ck.manifest.value("tensor_sha256", std::string()))
        throw FormatError("checkpoint tensor section hash mismatch");
    for (const auto& rec : ck.manifest.at("tensors")) {
        const auto name = rec.at("name").get<std::string>();
        const auto shape = rec.at("shape").get<std::vector<int64_t>>();
        const auto offset = rec.at("offset").get<uint64_t>();
        int64_t numel = 1;
        for (auto d : shape) numel *= d;
        const uint64_t len = static_cast<uint64_t>(numel) * 4;
        if (offset > data.size() || len > data.size() - offset) throw FormatError("tensor '" + name + "' out of range");
        auto t = torch::empty(shape, torch::kFloat);
        std::memcpy(t.data_ptr<float>(), data.data() + offset, len);
        if (!ck.tensors.emplace(name, t).second) throw FormatError("duplicate tensor name '" + name + "'");
    }
    ck.manifest.erase("tensors");
    ck.manifest.erase("tensor_sha256");
    ck.manifest.erase("format_version");
    return ck;
}

AtomicFile::AtomicFile(std::filesystem::path target) : target_(std::move(target)) {
    temp_ = target_;
    temp_ += ".tmp." + std::to_string(::getpid());
    file_ = std::fopen(temp_.c_str(), "wb");
    if (!file_) throw PreconditionError("cannot open " + temp_.string() + " for writing");
}

AtomicFile::~AtomicFile() {
    if (file_) std::fclose(file_);
    if (!committed_) {
        std::error_code ec;
        std::filesystem::remove(temp_, ec);
    }
}

void AtomicFile::write(std::string_view bytes) {
    if (!file_ || std::fwrite(bytes.data(), 1, bytes.size(), file_) != bytes.size())
        throw std::runtime_error("write failed: " + temp_.string());
}

void AtomicFile::commit() {
    if (std::fflush(file_) != 0 || ::fsync(::fileno(file_)) != 0) throw std::runtime_error("flush failed: " + temp_.string());
    std::fclose(file_);
    file_ = nullptr;
    std::filesystem::rename(temp_, target_);
    committed_ = true;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    AtomicFile f(path);
    f.write(bytes);
    f.commit();
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_atomic(path, ckpt.serialize());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw PreconditionError("checkpoint not found: " + path.string());
    return Checkpoint::parse(read_file(path));
}

Checkpoint interpolate_weights(const Checkpoint& a, const Checkpoint& b, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("interpolation lambda must lie in [0,1]");
    auto skip = [](const std::string& name) { return name.rfind("optim.", 0) == 0 || name.rfind("train.", 0) == 0; };
    Checkpoint out;
    size_t b_count = 0;
    for (const auto& [name, t] : b.tensors) b_count += skip(name) ? 0 : 1;
    size_t a_count = 0;
    for (const auto& [name, ta] : a.tensors) {
        if (skip(name)) continue;
        ++a_count;
        auto it = b.tensors.find(name);
        if (it == b.tensors.end()) throw ShapeError("interpolate: '" + name + "' missing from second checkpoint");
        if (!ta.sizes().equals(it->second.sizes())) throw ShapeError("interpolate: shape mismatch for '" + name + "'");
        const auto fa = as_f32(ta), fb = as_f32(it->second);
        if (lambda == 0.0) out.tensors[name] = fa.clone();
        else if (lambda == 1.0) out.tensors[name] = fb.clone();
        else out.tensors[name] = fa * static_cast<float>(1.0 - lambda) + fb * static_cast<float>(lambda);
    }
    if (a_count != b_count) throw ShapeError("interpolate: checkpoints hold different tensor sets");
    out.manifest = a.manifest;
    out.manifest.erase("rng");
    out.manifest["provenance"] = {{"kind", "interpolation"},
                                  {"lambda", lambda},
                                  {"a", a.manifest.value("provenance", nlohmann::json())},
                                  {"b", b.manifest.value("provenance", nlohmann::json())},
                                  {"a_step", a.step()},
                                  {"b_step", b.step()}};
    return out;
}

void export_module(const torch::nn::Module& module, const std::string& prefix,
                   std::map<std::string, torch::Tensor>& out) {
    for (const auto& p : module.named_parameters(true)) out[prefix + p.key()] = as_f32(p.value());
    for (const auto& b : module.named_buffers(true)) out[prefix + b.key()] = as_f32(b.value());
}

void import_module(torch::nn::Module& module, const std::string& prefix,
                   const std::map<std::string, torch::Tensor>& in) {
    torch::NoGradGuard guard;
    auto load = [&](const std::string& key, torch::Tensor& dst) {
        auto it = in.find(prefix + key);
        if (it == in.end()) throw FormatError("checkpoint missing '" + prefix + key + "'");
        if (!it->second.sizes().equals(dst.sizes()))
            throw FormatError("checkpoint shape mismatch for '" + prefix + key + "'");
        dst.copy_(it->second.to(dst.dtype()));
    };
    for (auto& p : module.named_parameters(true)) load(p.key(), p.value());
    for (auto& b : module.named_buffers(true)) load(b.key(), b.value());
}

}  // namespace wurstkit
