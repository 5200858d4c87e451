#include "tsrom/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tsrom/errors.hpp"

namespace tsrom {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_extents(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

Tensor like(const Tensor& t) { return Tensor(t.shape(), std::vector<double>(t.size(), 0.0)); }

template <class F>
Tensor map_values(const Tensor& t, F f) {
    Tensor out = like(t);
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
    return out;
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw DimensionError("tensor extents must be positive");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 2) throw DimensionError("tensor rank must be 1 or 2");
    std::size_t n = 1;
    for (auto e : shape_) {
        if (e == 0) throw DimensionError("tensor extents must be positive");
        n *= e;
    }
    if (n != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

bool Tensor::same_extents(const Tensor& other) const noexcept {
    return rows() == other.rows() && cols() == other.cols();
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner extents differ " + a.shape_string() + " x " +
                             b.shape_string());
    }
    Tensor out(a.rows(), b.cols());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    as_matrix(out) = as_matrix(a).transpose();
    return out;
}

double frobenius_norm(const Tensor& a) { return as_matrix(a).norm(); }

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape_ != this) throw Error("tape: operand recorded on a different tape");
        needs = needs || nodes_[p.index()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : nullptr, needs});
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var target, const Tensor& contribution) {
    Node& n = nodes_[target.index()];
    if (!n.requires_grad) return;
    if (n.adjoint.empty()) {
        n.adjoint = Tensor(n.value.shape(), contribution.storage());
    } else {
        n.adjoint += contribution;
    }
}

void Tape::accumulate_scaled(Var target, const Tensor& contribution, double s) {
    Node& n = nodes_[target.index()];
    if (!n.requires_grad) return;
    if (n.adjoint.empty()) n.adjoint = like(n.value);
    for (std::size_t i = 0; i < contribution.size(); ++i) n.adjoint[i] += s * contribution[i];
}

Tensor Tape::gradient(Var v) const {
    const Node& n = nodes_[v.index()];
    if (n.adjoint.empty()) return like(n.value);
    return n.adjoint;
}

void Tape::backward(Var output, const Tensor& seed) {
    if (!nodes_[output.index()].value.same_extents(seed)) {
        throw DimensionError("backward: seed shape " + seed.shape_string() +
                             " does not match output " + nodes_[output.index()].value.shape_string());
    }
    if (backward_done_) {
        for (auto& n : nodes_) n.adjoint = Tensor();
    }
    backward_done_ = true;
    if (!nodes_[output.index()].requires_grad) return;
    nodes_[output.index()].adjoint = Tensor(nodes_[output.index()].value.shape(), seed.storage());
    for (std::size_t i = output.index() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.adjoint.empty()) continue;
        // Parents always precede their children, so nodes_[i] is not touched here.
        n.backward(*this, n.adjoint, n.value);
    }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
    Tape& t = a.tape();
    return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g, const Tensor&) {
        if (tp.requires_grad(a)) {
            Tensor ga(a.rows(), a.cols());
            as_matrix(ga).noalias() = as_matrix(g) * as_matrix(b.value()).transpose();
            tp.accumulate(a, ga);
        }
        if (tp.requires_grad(b)) {
            Tensor gb(b.rows(), b.cols());
            as_matrix(gb).noalias() = as_matrix(a.value()).transpose() * as_matrix(g);
            tp.accumulate(b, gb);
        }
    });
}

Var add(Var a, Var b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g, const Tensor&) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g, const Tensor&) {
        tp.accumulate(a, g);
        tp.accumulate_scaled(b, g, -1.0);
    });
}

Var mul(Var a, Var b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g, const Tensor&) {
        if (tp.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
            tp.accumulate(a, ga);
        }
        if (tp.requires_grad(b)) {
            Tensor gb = g;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
            tp.accumulate(b, gb);
        }
    });
}

Var div(Var a, Var b) {
    require_same(a.value(), b.value(), "div");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g, const Tensor&) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (tp.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= bv[i];
            tp.accumulate(a, ga);
        }
        if (tp.requires_grad(b)) {
            Tensor gb = g;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= -av[i] / (bv[i] * bv[i]);
            tp.accumulate(b, gb);
        }
    });
}

Var add_row(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw DimensionError("add_row: row " + row.value().shape_string() + " cannot broadcast over " +
                             a.value().shape_string());
    }
    Tensor out = a.value();
    as_matrix(out).rowwise() += as_matrix(row.value()).row(0);
    return a.tape().record(std::move(out), {a, row}, [a, row](Tape& tp, const Tensor& g, const Tensor&) {
        tp.accumulate(a, g);
        if (tp.requires_grad(row)) {
            Tensor gr(1, g.cols());
            as_matrix(gr).row(0) = as_matrix(g).colwise().sum();
            tp.accumulate(row, gr);
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = map_values(a.value(), [s](double v) { return s * v; });
    return a.tape().record(std::move(out), {a},
                           [a, s](Tape& tp, const Tensor& g, const Tensor&) { tp.accumulate_scaled(a, g, s); });
}

Var shift(Var a, double s) {
    Tensor out = map_values(a.value(), [s](double v) { return v + s; });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) { tp.accumulate(a, g); });
}

Var relu(Var a) {
    Tensor out = map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga = g;
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (!(x[i] > 0.0)) ga[i] = 0.0;  // subgradient at 0 is 0
        }
        tp.accumulate(a, ga);
    });
}

Var exp(Var a) {
    Tensor out = map_values(a.value(), [](double v) { return std::exp(v); });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor& y) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i];
        tp.accumulate(a, ga);
    });
}

Var expm1(Var a) {
    Tensor out = map_values(a.value(), [](double v) { return std::expm1(v); });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor& y) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i] + 1.0;
        tp.accumulate(a, ga);
    });
}

Var log(Var a) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) throw NumericError("log: non-positive argument");
    }
    Tensor out = map_values(x, [](double v) { return std::log(v); });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= a.value()[i];
        tp.accumulate(a, ga);
    });
}

Var softplus(Var a) {
    Tensor out = map_values(a.value(), [](double v) {
        return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double v = a.value()[i];
            const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            ga[i] *= sig;
        }
        tp.accumulate(a, ga);
    });
}

Var square(Var a) {
    Tensor out = map_values(a.value(), [](double v) { return v * v; });
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 2.0 * a.value()[i];
        tp.accumulate(a, ga);
    });
}

Var sum(Var a) {
    const auto& v = a.value().storage();
    const double total = std::accumulate(v.begin(), v.end(), 0.0);
    return a.tape().record(Tensor::scalar(total), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga = like(a.value());
        ga.fill(g[0]);
        tp.accumulate(a, ga);
    });
}

Var sum_squares(Var a) {
    const auto& v = a.value().storage();
    double total = 0.0;
    for (double x : v) total += x * x;
    return a.tape().record(Tensor::scalar(total), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        tp.accumulate_scaled(a, a.value(), 2.0 * g[0]);
    });
}

Var row_sums(Var a) {
    Tensor out(a.rows(), 1);
    as_matrix(out).col(0) = as_matrix(a.value()).rowwise().sum();
    return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga(a.rows(), a.cols());
        as_matrix(ga).colwise() = as_matrix(g).col(0);
        tp.accumulate(a, ga);
    });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
    if (rows.empty()) throw DimensionError("gather_rows: empty row selection");
    const std::size_t m = a.cols();
    Tensor out(rows.size(), m);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= a.rows()) throw DimensionError("gather_rows: row index out of range");
        std::copy_n(a.value().data() + rows[r] * m, m, out.data() + r * m);
    }
    return a.tape().record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& tp, const Tensor& g, const Tensor&) {
        const std::size_t m = a.cols();
        Tensor ga(a.rows(), m);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double* src = g.data() + r * m;
            double* dst = ga.data() + rows[r] * m;
            for (std::size_t c = 0; c < m; ++c) dst[c] += src[c];
        }
        tp.accumulate(a, ga);
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    if (count == 0 || begin + count > a.cols()) throw DimensionError("slice_cols: range out of bounds");
    Tensor out(a.rows(), count);
    as_matrix(out) = as_matrix(a.value()).middleCols(begin, count);
    return a.tape().record(std::move(out), {a}, [a, begin, count](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga(a.rows(), a.cols());
        as_matrix(ga).middleCols(begin, count) = as_matrix(g);
        tp.accumulate(a, ga);
    });
}

Var dropout(Var a, double rate, std::mt19937_64& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must lie in [0, 1)");
    if (!training || rate == 0.0) {
        return a.tape().record(a.value(), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) { tp.accumulate(a, g); });
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv = 1.0 / (1.0 - rate);
    Tensor mask = like(a.value());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? inv : 0.0;
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return a.tape().record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= mask[i];
        tp.accumulate(a, ga);
    });
}

}  // namespace tsrom
