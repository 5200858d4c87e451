#include "tsrom/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "tsrom/errors.hpp"

namespace tsrom {

GradientCheck finite_diff_check(const GradientFunction& f, std::span<const double> point, double step,
                                double abs_floor) {
    if (!(step > 0.0)) throw ParameterError("finite_diff_check: step must be positive");
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> analytic(x.size(), 0.0);
    const double f0 = f(x, analytic);
    if (!std::isfinite(f0)) throw NumericError("finite_diff_check: non-finite function value");

    GradientCheck result;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + step;
        const double fp = f(x, {});
        x[i] = xi - step;
        const double fm = f(x, {});
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_check: non-finite function value at coordinate " +
                               std::to_string(i));
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / (std::abs(fd) + abs_floor);
        if (err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst_index = i;
        }
    }
    return result;
}

}  // namespace tsrom
