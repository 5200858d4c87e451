#pragma once

#include <functional>
#include <span>

namespace tsrom {

// Objective that returns f(x) and, when `grad` is non-empty, writes df/dx into it.
using GradientFunction = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct GradientCheck {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
};

// Compares the analytic gradient at `point` with central differences of width
// `step` per coordinate. Error per coordinate is
// |analytic - fd| / (|fd| + abs_floor).
GradientCheck finite_diff_check(const GradientFunction& f, std::span<const double> point, double step,
                                double abs_floor = 1e-8);

}  // namespace tsrom
