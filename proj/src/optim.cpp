#include "wurstkit/optim.hpp"

#include "wurstkit/errors.hpp"

#include <cmath>

namespace wurstkit {

double warmup_lr(const AdamWConfig& cfg, int64_t step) {
    if (step < 0) throw DomainError("warmup_lr: negative step");
    if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.lr;
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

AdamW::AdamW(std::vector<std::pair<std::string, torch::Tensor>> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw DomainError("AdamW: learning rate must be > 0");
    if (cfg_.warmup_steps < 0) throw DomainError("AdamW: warmup must be >= 0");
    for (const auto& [name, p] : params_) {
        m_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
        v_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
    }
}

void AdamW::step(double lr) {
    torch::NoGradGuard guard;
    ++updates_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(updates_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(updates_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].second;
        const auto& g = p.grad();
        if (!g.defined()) continue;
        p.mul_(1.0 - lr * cfg_.weight_decay);
        m_[i].mul_(cfg_.beta1).add_(g, 1.0 - cfg_.beta1);
        v_[i].mul_(cfg_.beta2).addcmul_(g, g, 1.0 - cfg_.beta2);
        auto denom = (v_[i] / c2).sqrt_().add_(cfg_.eps);
        p.addcdiv_(m_[i], denom, -lr / c1);
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) {
        if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
    }
}

void AdamW::export_state(std::map<std::string, torch::Tensor>& out, const std::string& prefix) const {
    for (size_t i = 0; i < params_.size(); ++i) {
        out[prefix + params_[i].first + ".m"] = m_[i];
        out[prefix + params_[i].first + ".v"] = v_[i];
    }
    out[prefix + "updates"] = torch::tensor({static_cast<float>(updates_)});
}

void AdamW::import_state(const std::map<std::string, torch::Tensor>& in, const std::string& prefix) {
    auto fetch = [&](const std::string& key, const torch::Tensor& like) {
        auto it = in.find(key);
        if (it == in.end()) throw FormatError("optimizer state missing " + key);
        if (!it->second.sizes().equals(like.sizes())) throw FormatError("optimizer state shape mismatch for " + key);
        return it->second;
    };
    torch::NoGradGuard guard;
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].copy_(fetch(prefix + params_[i].first + ".m", m_[i]));
        v_[i].copy_(fetch(prefix + params_[i].first + ".v", v_[i]));
    }
    auto it = in.find(prefix + "updates");
    if (it == in.end()) throw FormatError("optimizer state missing " + prefix + "updates");
    updates_ = static_cast<int64_t>(it->second.item<float>());
}

std::vector<std::pair<std::string, torch::Tensor>> trainable(const torch::nn::Module& module,
                                                             const std::string& prefix) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : module.named_parameters(true)) {
        if (item.value().requires_grad()) out.emplace_back(prefix + item.key(), item.value());
    }
    return out;
}

}  // namespace wurstkit
