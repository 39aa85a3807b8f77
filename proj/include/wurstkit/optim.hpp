#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace wurstkit {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int64_t warmup_steps = 250;
};

// Linear warmup from 0 at step 0 to the base rate at warmup_steps, constant after.
double warmup_lr(const AdamWConfig& cfg, int64_t step);

// AdamW with decoupled weight decay:
//   p <- p - lr * wd * p
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
// where k counts the updates taken so far (1-based).
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, torch::Tensor>> params, AdamWConfig cfg);

    // Applies one update at the given learning rate; parameters without a
    // gradient are skipped.
    void step(double lr);
    void zero_grad();

    int64_t updates() const { return updates_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<std::pair<std::string, torch::Tensor>>& params() const { return params_; }

    // Moment buffers keyed "<prefix><name>.m" / ".v" plus "<prefix>updates".
    void export_state(std::map<std::string, torch::Tensor>& out, const std::string& prefix) const;
    void import_state(const std::map<std::string, torch::Tensor>& in, const std::string& prefix);

private:
    std::vector<std::pair<std::string, torch::Tensor>> params_;
    std::vector<torch::Tensor> m_, v_;
    AdamWConfig cfg_;
    int64_t updates_ = 0;
};

// Trainable parameters of a module with their dotted names.
std::vector<std::pair<std::string, torch::Tensor>> trainable(const torch::nn::Module& module,
                                                             const std::string& prefix = "");

}  // namespace wurstkit
