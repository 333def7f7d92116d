#include "matprobe/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace matprobe::numerics {

namespace {

constexpr double kRelativeFloor = 1e-6;
// One-sided slopes further apart than this (relative) mark a kink.
constexpr double kKinkRatio = 1e-2;

double evaluate(const LossFn& f) {
    Tape t;
    return f(t).value().item();
}

}  // namespace

bool GradCheckReport::passed() const {
    return max_relative_error() < tolerance;
}

double GradCheckReport::max_relative_error() const {
    double worst = 0.0;
    for (const auto& p : parameters) worst = std::max(worst, p.max_relative_error);
    return worst;
}

GradCheckReport grad_check(const LossFn& f, const std::vector<Parameter*>& params, double step, double tolerance) {
    GradientBuffer analytic;
    double f0 = 0.0;
    {
        Tape t;
        Var loss = f(t);
        f0 = loss.value().item();
        t.backward(loss, analytic);
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    for (Parameter* p : params) {
        ParameterCheck check{p->name, 0.0, 0, {}};
        const auto it = analytic.find(p);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double up = evaluate(f);
            p->value[i] = saved - step;
            const double down = evaluate(f);
            p->value[i] = saved;

            const double forward = (up - f0) / step;
            const double backward = (f0 - down) / step;
            if (std::abs(forward - backward) > kKinkRatio * std::max({1.0, std::abs(forward), std::abs(backward)})) {
                check.non_differentiable.push_back(i);
                continue;
            }
            const double numeric = (up - down) / (2.0 * step);
            const double a = it == analytic.end() ? 0.0 : it->second[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), kRelativeFloor});
            const double err = std::abs(a - numeric) / denom;
            if (err > check.max_relative_error) {
                check.max_relative_error = err;
                check.worst_index = i;
            }
        }
        report.parameters.push_back(std::move(check));
    }
    return report;
}

}  // namespace matprobe::numerics
