#pragma once

#include <cstddef>
#include <vector>

#include "matprobe/numerics/tensor.hpp"

namespace matprobe::numerics {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// AdamW with decoupled weight decay. The learning rate may be changed
/// between steps (used for cosine annealing).
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig config);

    void step();
    void zero_grad();
    void set_lr(double lr) { config_.lr = lr; }
    [[nodiscard]] double lr() const { return config_.lr; }
    [[nodiscard]] std::size_t steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Cosine annealing: base_lr at period 0, approaching min_lr as period -> total.
[[nodiscard]] double cosine_lr(double base_lr, double min_lr, std::size_t period, std::size_t total);

}  // namespace matprobe::numerics
