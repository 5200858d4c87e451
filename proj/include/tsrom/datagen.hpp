#pragma once

// Training corpora: a linear ODE integrated with RK4, a hidden two-process
// complex multiscale signal seen through a random linear map, and
// Kuramoto-Sivashinsky solutions from an ETDRK4 pseudo-spectral solver.

#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrom/dataset.hpp"
#include "tsrom/latent.hpp"
#include "tsrom/model.hpp"
#include "tsrom/tensor.hpp"

namespace tsrom {

struct Trajectory {
    std::vector<double> times;
    Tensor states;  // n x f

    std::size_t size() const noexcept { return times.size(); }
};

// dx = field(t, x)
using VectorField = std::function<void(double t, std::span<const double> x, std::span<double> dx)>;

// Classical fixed-step RK4. Stores the initial state and every step (n_steps + 1 rows).
Trajectory rk4_integrate(const VectorField& field, std::span<const double> x0, double step, std::size_t n_steps,
                         double t0 = 0.0);

struct LinearOdeConfig {
    Tensor system = Tensor::matrix({{-5.0, 2.0}, {2.0, -5.0}});
    std::vector<double> initial{10.0, -3.0};
    double t_max = 2.0;
    double step = 2.5e-4;
    std::size_t n_series = 40;
    std::size_t points_per_series = 150;
    bool irregular = true;

    void validate() const;
    nlohmann::json to_json() const;
};

// Each series starts at the initial condition. Irregular series take the remaining
// points as a sorted uniform subset of the stored steps; regular ones use a fixed stride.
Dataset gen_linear_ode(const LinearOdeConfig& config, std::uint64_t seed);

// exp(system * dt) x0, the exact flow of the linear system.
std::vector<double> linear_flow(const Tensor& system, std::span<const double> x0, double dt);

struct MultiscaleConfig {
    // dp/dt = rate * p
    std::vector<Complex> rates{{-0.1, 1.0}, {-0.9, 1.5}};
    std::vector<Complex> initial{{1.0, 0.0}, {1.0, 0.0}};
    std::size_t observed_dim = 8;
    Tensor mixing;  // observed_dim x 2*rates; empty: drawn from the seed
    double t_max = 15.0;
    double dt = 0.0025;
    std::size_t n_series = 40;
    std::size_t points_per_series = 150;

    void validate() const;
    nlohmann::json to_json() const;
};

// Random Gaussian map with full column rank, redrawn until it is.
Tensor draw_mixing(std::size_t rows, std::size_t cols, std::uint64_t seed);
Dataset gen_hidden_multiscale(const MultiscaleConfig& config, std::uint64_t seed);
// Closed-form p(t), mapped through W: x = W (Re p1, Im p1, Re p2, Im p2, ...).
std::vector<double> multiscale_state(const MultiscaleConfig& config, const Tensor& mixing, double t);

struct KsConfig {
    double viscosity = 1.0;
    double length = 22.0;
    std::size_t grid = 64;
    double step = 0.025;
    std::size_t stride = 10;
    std::size_t n_outputs = 1000;
    std::vector<double> initial;  // empty: default seed profile
    double perturbation = 0.0;    // amplitude of seeded low-mode noise added to the initial profile
    std::size_t n_series = 40;
    std::size_t points_per_series = 25;

    void validate() const;
    nlohmann::json to_json() const;
    double output_dt() const { return step * static_cast<double>(stride); }
};

// cos(2 pi y / L) (1 + sin(2 pi y / L)) on the grid y_j = j L / N.
std::vector<double> ks_default_initial(std::size_t grid, double length);
// Resolved initial profile: explicit or default, plus the seeded perturbation.
std::vector<double> ks_initial(const KsConfig& config, std::uint64_t seed);

// Spectral discretisation shared by the ETDRK4 solver and reference integrators.
class KsSpectral {
public:
    KsSpectral(std::size_t grid, double length, double viscosity);
    ~KsSpectral();
    KsSpectral(const KsSpectral&) = delete;
    KsSpectral& operator=(const KsSpectral&) = delete;

    std::size_t grid() const noexcept { return n_; }
    // Physical-space right-hand side of the dealiased semi-discrete system.
    void rhs(std::span<const double> u, std::span<double> du);

    std::vector<std::complex<double>> forward(std::span<const double> u);
    std::vector<double> inverse(std::span<const std::complex<double>> v);
    // 2/3-rule dealiased -u u_y in Fourier space.
    std::vector<std::complex<double>> nonlinear(std::span<const std::complex<double>> v);

    const std::vector<double>& linear() const noexcept { return linear_; }
    const std::vector<double>& wavenumbers() const noexcept { return k_; }
    bool kept(std::size_t mode) const noexcept { return mode < cutoff_; }

private:
    std::size_t n_;
    std::size_t cutoff_;
    std::vector<double> k_;
    std::vector<double> linear_;
    struct Plans;
    Plans* plans_;
};

// Integrates from the resolved initial profile and stores n_outputs states every
// `stride` solver steps, the first at t = 0. Throws DivergenceError on blow-up.
Trajectory etdrk4_ks(const KsConfig& config, std::uint64_t seed = 0);

// Contiguous non-overlapping windows from the start of the trajectory.
Dataset split_series(const Trajectory& trajectory, std::size_t n_series, std::size_t length);

Dataset gen_ks(const KsConfig& config, std::uint64_t seed);

std::string config_digest(const nlohmann::json& generator_config);

}  // namespace tsrom
