#pragma once

#include <functional>
#include <string>
#include <vector>

#include "matprobe/numerics/tape.hpp"

namespace matprobe::numerics {

struct ParameterCheck {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    /// Coordinates where the one-sided slopes disagree; excluded from the error.
    std::vector<std::size_t> non_differentiable;
};

struct GradCheckReport {
    std::vector<ParameterCheck> parameters;
    double tolerance = 0.0;

    [[nodiscard]] bool passed() const;
    [[nodiscard]] double max_relative_error() const;
};

/// Builds the scalar loss on a fresh tape. Must read parameters through
/// Tape::parameter so perturbations are visible.
using LossFn = std::function<Var(Tape&)>;

/// Compares the tape gradient with central differences for every coordinate
/// of every parameter. Parameter values are restored afterwards; their grads
/// are left untouched.
GradCheckReport grad_check(const LossFn& f, const std::vector<Parameter*>& params, double step, double tolerance);

}  // namespace matprobe::numerics
