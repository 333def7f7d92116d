#include "matprobe/numerics/optim.hpp"

#include <cmath>
#include <numbers>

#include "matprobe/error.hpp"

namespace matprobe::numerics {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const Parameter* p : params_) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (p.grad.size() != p.value.size()) throw NumericError("parameter '" + p.name + "' has no gradient");
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            p.value[i] -= config_.lr * config_.weight_decay * p.value[i];
            p.value[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double cosine_lr(double base_lr, double min_lr, std::size_t period, std::size_t total) {
    if (total == 0) return base_lr;
    const double frac = static_cast<double>(period) / static_cast<double>(total);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace matprobe::numerics
