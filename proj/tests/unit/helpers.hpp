#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tsrom/gradcheck.hpp"
#include "tsrom/tensor.hpp"

namespace tsrom::test {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

// Keeps every entry at least `gap` away from zero (kinks of relu, poles of div).
inline Tensor away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double gap) {
    Tensor t = random_tensor(rows, cols, rng);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::copysign(gap + std::abs(t[i]), t[i]);
    return t;
}

// Scalar objective sum(w * op(inputs)) over the concatenated input entries, with
// a fixed random projection w so that every output entry matters.
using TapedOp = std::function<Var(Tape&, std::span<const Var>)>;

inline GradientCheck check_op(const TapedOp& op, const std::vector<Tensor>& inputs, std::uint64_t seed,
                              double step = 1e-6) {
    std::vector<double> point;
    for (const auto& t : inputs) point.insert(point.end(), t.storage().begin(), t.storage().end());
    std::mt19937_64 rng(seed);
    Tensor projection;
    auto objective = [&](std::span<const double> x, std::span<double> grad) {
        Tape tape;
        std::vector<Var> leaves;
        std::size_t at = 0;
        for (const auto& t : inputs) {
            Tensor v = t;
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[at + i];
            at += v.size();
            leaves.push_back(tape.variable(std::move(v)));
        }
        const Var out = op(tape, leaves);
        if (projection.empty()) projection = random_tensor(out.rows(), out.cols(), rng);
        Tensor p = projection;
        if (out.value().rank() == 1) p = Tensor({out.value().size()}, p.storage());
        const Var loss = sum(mul(out, tape.constant(p)));
        if (!grad.empty()) {
            tape.backward(loss);
            at = 0;
            for (const auto& leaf : leaves) {
                const Tensor g = tape.gradient(leaf);
                for (std::size_t i = 0; i < g.size(); ++i) grad[at + i] = g[i];
                at += g.size();
            }
        }
        return loss.value()[0];
    };
    return finite_diff_check(objective, point, step);
}

}  // namespace tsrom::test
