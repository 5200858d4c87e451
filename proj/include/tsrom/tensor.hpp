#pragma once

// Dense real tensors and a reverse-mode gradient tape.
//
// Everything trainable in the library is expressed as a composition of the
// primitives below. Tensors are rank-1 or rank-2 row-major arrays of doubles;
// rank-1 tensors behave as a single row in every primitive. Complex values are
// stored as interleaved (re, im) column pairs, so the kernel itself never
// needs a complex type.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tsrom {

class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);
    static Tensor scalar(double value) { return Tensor(1, 1, value); }
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : (shape_.empty() ? 0 : 1); }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    // Same rows() and cols(); rank-1 {n} matches rank-2 {1, n}.
    bool same_extents(const Tensor& other) const noexcept;
    bool all_finite() const noexcept;
    std::string shape_string() const;

    void fill(double value);
    Tensor& operator+=(const Tensor& other);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Plain (untaped) helpers.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double frobenius_norm(const Tensor& a);

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    Tape& tape() const { return *tape_; }
    std::size_t index() const noexcept { return index_; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

// Single-threaded record of primitive evaluations. One tape per training step.
class Tape {
public:
    // Receives the adjoint and value of the node's output; pushes contributions to parents.
    using BackwardFn =
        std::function<void(Tape&, const Tensor& out_adjoint, const Tensor& out_value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var variable(Tensor value);
    Var constant(Tensor value);

    const Tensor& value(Var v) const { return nodes_[v.index()].value; }
    bool requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }

    // Adjoint after backward(); zeros for inputs the output does not depend on.
    Tensor gradient(Var v) const;

    void backward(Var output, const Tensor& seed);
    void backward(Var scalar_output) { backward(scalar_output, Tensor::scalar(1.0)); }

    std::size_t size() const noexcept { return nodes_.size(); }

    // Primitive authoring interface.
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
    void accumulate(Var target, const Tensor& contribution);
    void accumulate_scaled(Var target, const Tensor& contribution, double scale);

private:
    struct Node {
        Tensor value;
        Tensor adjoint;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Differentiable primitives. Binary elementwise ops require identical extents.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_row(Var a, Var row);  // a (n x m) + row (1 x m), broadcast over rows
Var scale(Var a, double s);
Var shift(Var a, double s);
Var relu(Var a);
Var exp(Var a);
Var expm1(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var sum(Var a);                     // -> 1 x 1
Var sum_squares(Var a);             // -> 1 x 1
Var row_sums(Var a);                // -> n x 1
Var gather_rows(Var a, std::vector<std::size_t> rows);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

// Inverted dropout: survivors are rescaled by 1/(1-rate); identity when !training.
Var dropout(Var a, double rate, std::mt19937_64& rng, bool training);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

}  // namespace tsrom
