#include "tsrom/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <fftw3.h>

#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/rng.hpp"

namespace tsrom {

namespace {

using cd = std::complex<double>;

constexpr double kBlowUp = 1e6;
constexpr std::size_t kContourPoints = 32;

nlohmann::json complex_list(const std::vector<Complex>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& z : v) out.push_back({z.real(), z.imag()});
    return out;
}

Series take_rows(const Trajectory& traj, const std::vector<std::size_t>& rows) {
    Series s;
    s.states = Tensor(rows.size(), traj.states.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.times.push_back(traj.times[rows[i]]);
        for (std::size_t c = 0; c < traj.states.cols(); ++c) s.states(i, c) = traj.states(rows[i], c);
    }
    return s;
}

}  // namespace

std::string config_digest(const nlohmann::json& generator_config) { return sha256_hex(generator_config.dump()); }

// ---------------------------------------------------------------------------

Trajectory rk4_integrate(const VectorField& field, std::span<const double> x0, double step, std::size_t n_steps,
                         double t0) {
    if (!(step > 0.0) || !std::isfinite(step)) throw ParameterError("rk4: step must be positive");
    if (x0.empty()) throw DimensionError("rk4: empty initial state");
    const std::size_t f = x0.size();
    Trajectory traj;
    traj.states = Tensor(n_steps + 1, f);
    traj.times.resize(n_steps + 1);
    std::vector<double> x(x0.begin(), x0.end()), k1(f), k2(f), k3(f), k4(f), tmp(f);
    auto store = [&](std::size_t i, double t) {
        traj.times[i] = t;
        for (std::size_t c = 0; c < f; ++c) traj.states(i, c) = x[c];
    };
    store(0, t0);
    for (std::size_t n = 0; n < n_steps; ++n) {
        const double t = t0 + static_cast<double>(n) * step;
        field(t, x, k1);
        for (std::size_t c = 0; c < f; ++c) tmp[c] = x[c] + 0.5 * step * k1[c];
        field(t + 0.5 * step, tmp, k2);
        for (std::size_t c = 0; c < f; ++c) tmp[c] = x[c] + 0.5 * step * k2[c];
        field(t + 0.5 * step, tmp, k3);
        for (std::size_t c = 0; c < f; ++c) tmp[c] = x[c] + step * k3[c];
        field(t + step, tmp, k4);
        for (std::size_t c = 0; c < f; ++c) {
            x[c] += step / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            if (!std::isfinite(x[c])) throw DivergenceError("rk4: non-finite state at step " + std::to_string(n + 1));
        }
        // multiply instead of accumulate so time stamps stay exact multiples of the step
        store(n + 1, t0 + static_cast<double>(n + 1) * step);
    }
    return traj;
}

// ---------------------------------------------------------------------------

void LinearOdeConfig::validate() const {
    const std::size_t f = initial.size();
    if (f == 0 || system.rank() != 2 || system.rows() != f || system.cols() != f) {
        throw ConfigError("linear ode: system matrix must be square and match the initial condition");
    }
    if (!(step > 0.0) || !(t_max > 0.0)) throw ConfigError("linear ode: step and t_max must be positive");
    if (n_series == 0 || points_per_series == 0) throw ConfigError("linear ode: need at least one point and series");
}

nlohmann::json LinearOdeConfig::to_json() const {
    return {{"generator", "linear-ode"}, {"system", tensor_to_json(system)}, {"initial", initial},
            {"t_max", t_max},           {"step", step},                       {"n_series", n_series},
            {"points_per_series", points_per_series}, {"irregular", irregular}};
}

Dataset gen_linear_ode(const LinearOdeConfig& config, std::uint64_t seed) {
    config.validate();
    const auto n_steps = static_cast<std::size_t>(std::llround(config.t_max / config.step));
    const std::size_t f = config.initial.size();
    const Tensor& a = config.system;
    const Trajectory traj = rk4_integrate(
        [&](double, std::span<const double> x, std::span<double> dx) {
            for (std::size_t i = 0; i < f; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < f; ++j) s += a(i, j) * x[j];
                dx[i] = s;
            }
        },
        config.initial, config.step, n_steps);

    const std::size_t stored = traj.size();
    const std::size_t m = config.points_per_series;
    if (m > stored) {
        throw ParameterError("linear ode: " + std::to_string(m) + " points requested but only " +
                             std::to_string(stored) + " stored");
    }
    std::mt19937_64 rng(derive_seed(seed, streams::datagen));
    Dataset d;
    d.state_dim = f;
    std::vector<std::size_t> pool(stored - 1);
    std::iota(pool.begin(), pool.end(), std::size_t{1});
    for (std::size_t k = 0; k < config.n_series; ++k) {
        std::vector<std::size_t> rows{0};
        if (m > 1) {
            if (config.irregular) {
                std::vector<std::size_t> picked;
                std::sample(pool.begin(), pool.end(), std::back_inserter(picked), m - 1, rng);
                rows.insert(rows.end(), picked.begin(), picked.end());
            } else {
                const std::size_t stride = (stored - 1) / (m - 1);
                for (std::size_t i = 1; i < m; ++i) rows.push_back(i * stride);
            }
        }
        d.series.push_back(take_rows(traj, rows));
    }
    const nlohmann::json cfg = config.to_json();
    d.metadata = {{"generator", "linear-ode"},
                  {"config", cfg},
                  {"config_digest", config_digest(cfg)},
                  {"seed", seed},
                  {"stored_points", stored}};
    // ground truth: eigenpairs of the system matrix (symmetric by default)
    Eigen::MatrixXd sys(f, f);
    for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < f; ++j) sys(i, j) = a(i, j);
    Eigen::EigenSolver<Eigen::MatrixXd> eig(sys);
    nlohmann::json lambdas = nlohmann::json::array();
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        const cd ev = eig.eigenvalues()[i];
        lambdas.push_back({-ev.real(), -ev.imag()});
    }
    d.metadata["true_lambda"] = lambdas;
    return d;
}

std::vector<double> linear_flow(const Tensor& system, std::span<const double> x0, double dt) {
    const std::size_t f = x0.size();
    if (system.rank() != 2 || system.rows() != f || system.cols() != f) {
        throw DimensionError("linear_flow: system does not match the state");
    }
    Eigen::MatrixXd a(f, f);
    Eigen::VectorXd x(f);
    for (std::size_t i = 0; i < f; ++i) {
        x(i) = x0[i];
        for (std::size_t j = 0; j < f; ++j) a(i, j) = system(i, j) * dt;
    }
    const Eigen::VectorXd y = a.exp() * x;
    return {y.data(), y.data() + f};
}

// ---------------------------------------------------------------------------

void MultiscaleConfig::validate() const {
    if (rates.empty() || rates.size() != initial.size()) {
        throw ConfigError("multiscale: rates and initial values must be non-empty and of equal length");
    }
    if (observed_dim < 2 * rates.size()) throw ConfigError("multiscale: observed_dim must be at least 2 x processes");
    if (!mixing.storage().empty() && (mixing.rows() != observed_dim || mixing.cols() != 2 * rates.size())) {
        throw ConfigError("multiscale: mixing matrix has the wrong shape");
    }
    if (!(dt > 0.0) || !(t_max > 0.0)) throw ConfigError("multiscale: dt and t_max must be positive");
    if (n_series == 0 || points_per_series == 0) throw ConfigError("multiscale: need at least one point and series");
}

nlohmann::json MultiscaleConfig::to_json() const {
    nlohmann::json j = {{"generator", "multiscale"},
                        {"rates", complex_list(rates)},
                        {"initial", complex_list(initial)},
                        {"observed_dim", observed_dim},
                        {"t_max", t_max},
                        {"dt", dt},
                        {"n_series", n_series},
                        {"points_per_series", points_per_series}};
    if (!mixing.storage().empty()) j["mixing"] = tensor_to_json(mixing);
    return j;
}

Tensor draw_mixing(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    if (cols > rows) throw ParameterError("mixing: more columns than rows cannot have full column rank");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (;;) {
        Tensor w(rows, cols);
        Eigen::MatrixXd m(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) m(i, j) = w(i, j) = normal(rng);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
        if (static_cast<std::size_t>(lu.rank()) == cols) return w;
    }
}

std::vector<double> multiscale_state(const MultiscaleConfig& config, const Tensor& mixing, double t) {
    const std::size_t q = config.rates.size();
    std::vector<double> hidden(2 * q);
    for (std::size_t i = 0; i < q; ++i) {
        const cd p = config.initial[i] * std::exp(config.rates[i] * t);
        hidden[2 * i] = p.real();
        hidden[2 * i + 1] = p.imag();
    }
    std::vector<double> x(mixing.rows(), 0.0);
    for (std::size_t r = 0; r < mixing.rows(); ++r) {
        for (std::size_t c = 0; c < hidden.size(); ++c) x[r] += mixing(r, c) * hidden[c];
    }
    return x;
}

Dataset gen_hidden_multiscale(const MultiscaleConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t q = config.rates.size();
    const Tensor w = config.mixing.storage().empty()
                         ? draw_mixing(config.observed_dim, 2 * q, derive_seed(seed, streams::mixing))
                         : config.mixing;
    const auto n_steps = static_cast<std::size_t>(std::llround(config.t_max / config.dt));
    Trajectory traj;
    traj.states = Tensor(n_steps + 1, config.observed_dim);
    for (std::size_t i = 0; i <= n_steps; ++i) {
        const double t = static_cast<double>(i) * config.dt;
        traj.times.push_back(t);
        const auto x = multiscale_state(config, w, t);
        for (std::size_t c = 0; c < x.size(); ++c) traj.states(i, c) = x[c];
    }
    Dataset d = split_series(traj, config.n_series, config.points_per_series);
    const nlohmann::json cfg = config.to_json();
    std::vector<Complex> lambda;
    for (const auto& r : config.rates) lambda.push_back(-r);
    d.metadata = {{"generator", "multiscale"},
                  {"config", cfg},
                  {"config_digest", config_digest(cfg)},
                  {"seed", seed},
                  {"mixing", tensor_to_json(w)},
                  {"true_lambda", complex_list(lambda)}};
    return d;
}

// ---------------------------------------------------------------------------

void KsConfig::validate() const {
    if (grid < 4 || grid % 2 != 0) throw ConfigError("ks: grid must be even and at least 4");
    if (!(length > 0.0) || !(viscosity > 0.0)) throw ConfigError("ks: length and viscosity must be positive");
    if (!(step > 0.0) || stride == 0 || n_outputs == 0) throw ConfigError("ks: step, stride and n_outputs must be positive");
    if (!initial.empty() && initial.size() != grid) throw ConfigError("ks: initial profile does not match the grid");
    if (perturbation < 0.0) throw ConfigError("ks: perturbation must be non-negative");
}

nlohmann::json KsConfig::to_json() const {
    nlohmann::json j = {{"generator", "ks"},       {"viscosity", viscosity}, {"length", length},
                        {"grid", grid},            {"step", step},           {"stride", stride},
                        {"n_outputs", n_outputs},  {"perturbation", perturbation},
                        {"n_series", n_series},    {"points_per_series", points_per_series},
                        {"initial", initial.empty() ? nlohmann::json("default") : nlohmann::json(initial)}};
    return j;
}

std::vector<double> ks_default_initial(std::size_t grid, double length) {
    std::vector<double> u(grid);
    for (std::size_t j = 0; j < grid; ++j) {
        const double y = static_cast<double>(j) * length / static_cast<double>(grid);
        const double a = 2.0 * std::numbers::pi * y / length;
        u[j] = std::cos(a) * (1.0 + std::sin(a));
    }
    return u;
}

std::vector<double> ks_initial(const KsConfig& config, std::uint64_t seed) {
    std::vector<double> u = config.initial.empty() ? ks_default_initial(config.grid, config.length) : config.initial;
    if (config.perturbation > 0.0) {
        std::mt19937_64 rng(derive_seed(seed, streams::datagen));
        std::normal_distribution<double> normal(0.0, config.perturbation);
        for (int mode = 1; mode <= 4; ++mode) {
            const double a = normal(rng), b = normal(rng);
            for (std::size_t j = 0; j < u.size(); ++j) {
                const double y = static_cast<double>(j) * config.length / static_cast<double>(config.grid);
                const double arg = 2.0 * std::numbers::pi * mode * y / config.length;
                u[j] += a * std::cos(arg) + b * std::sin(arg);
            }
        }
    }
    return u;
}

struct KsSpectral::Plans {
    std::vector<double> real;
    fftw_complex* spec = nullptr;
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
};

KsSpectral::KsSpectral(std::size_t grid, double length, double viscosity) : n_(grid), plans_(new Plans) {
    const std::size_t modes = grid / 2 + 1;
    // 2/3 rule: keep |j| < N/3
    cutoff_ = (grid + 2) / 3;
    for (std::size_t j = 0; j < modes; ++j) {
        const double k = 2.0 * std::numbers::pi * static_cast<double>(j) / length;
        linear_.push_back(k * k - viscosity * k * k * k * k);
        k_.push_back(j == grid / 2 ? 0.0 : k);  // Nyquist derivative is zeroed
    }
    plans_->real.resize(grid);
    plans_->spec = fftw_alloc_complex(modes);
    plans_->fwd = fftw_plan_dft_r2c_1d(static_cast<int>(grid), plans_->real.data(), plans_->spec, FFTW_ESTIMATE);
    plans_->inv = fftw_plan_dft_c2r_1d(static_cast<int>(grid), plans_->spec, plans_->real.data(), FFTW_ESTIMATE);
}

KsSpectral::~KsSpectral() {
    fftw_destroy_plan(plans_->fwd);
    fftw_destroy_plan(plans_->inv);
    fftw_free(plans_->spec);
    delete plans_;
}

std::vector<cd> KsSpectral::forward(std::span<const double> u) {
    if (u.size() != n_) throw DimensionError("ks: state does not match the grid");
    std::copy(u.begin(), u.end(), plans_->real.begin());
    fftw_execute(plans_->fwd);
    std::vector<cd> v(n_ / 2 + 1);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = {plans_->spec[j][0], plans_->spec[j][1]};
    return v;
}

std::vector<double> KsSpectral::inverse(std::span<const cd> v) {
    for (std::size_t j = 0; j < v.size(); ++j) {
        plans_->spec[j][0] = v[j].real();
        plans_->spec[j][1] = v[j].imag();
    }
    fftw_execute(plans_->inv);  // unnormalised
    std::vector<double> u(plans_->real);
    for (double& x : u) x /= static_cast<double>(n_);
    return u;
}

std::vector<cd> KsSpectral::nonlinear(std::span<const cd> v) {
    std::vector<cd> masked(v.begin(), v.end());
    for (std::size_t j = cutoff_; j < masked.size(); ++j) masked[j] = 0.0;
    std::vector<double> u = inverse(masked);
    for (double& x : u) x *= x;
    std::vector<cd> out = forward(u);
    // -u u_y = -(1/2) d/dy (u^2)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = kept(j) ? cd(0.0, -0.5 * k_[j]) * out[j] : cd(0.0);
    return out;
}

void KsSpectral::rhs(std::span<const double> u, std::span<double> du) {
    const auto v = forward(u);
    auto nv = nonlinear(v);
    for (std::size_t j = 0; j < v.size(); ++j) nv[j] += linear_[j] * v[j];
    const auto out = inverse(nv);
    std::copy(out.begin(), out.end(), du.begin());
}

Trajectory etdrk4_ks(const KsConfig& config, std::uint64_t seed) {
    config.validate();
    KsSpectral ks(config.grid, config.length, config.viscosity);
    const std::size_t modes = config.grid / 2 + 1;
    const double h = config.step;

    // phi-function coefficients by contour averaging around each h L
    std::vector<double> e(modes), e2(modes), q(modes), f1(modes), f2(modes), f3(modes);
    for (std::size_t j = 0; j < modes; ++j) {
        const double hl = h * ks.linear()[j];
        e[j] = std::exp(hl);
        e2[j] = std::exp(hl / 2.0);
        cd sq = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        for (std::size_t m = 1; m <= kContourPoints; ++m) {
            const cd r = std::exp(cd(0.0, std::numbers::pi * (static_cast<double>(m) - 0.5) / kContourPoints));
            const cd z = hl + r;
            const cd ez = std::exp(z);
            const cd z3 = z * z * z;
            sq += (std::exp(z / 2.0) - 1.0) / z;
            s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
            s2 += (2.0 + z + ez * (-2.0 + z)) / z3;
            s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
        }
        const double inv_m = 1.0 / static_cast<double>(kContourPoints);
        q[j] = h * (sq * inv_m).real();
        f1[j] = h * (s1 * inv_m).real();
        f2[j] = h * (s2 * inv_m).real();
        f3[j] = h * (s3 * inv_m).real();
    }

    std::vector<double> u0 = ks_initial(config, seed);
    std::vector<cd> v = ks.forward(u0);
    for (std::size_t j = 0; j < modes; ++j) {
        if (!ks.kept(j)) v[j] = 0.0;
    }

    Trajectory traj;
    traj.states = Tensor(config.n_outputs, config.grid);
    auto store = [&](std::size_t row, std::size_t steps_done) {
        const auto u = ks.inverse(v);
        traj.times.push_back(static_cast<double>(steps_done) * h);
        for (std::size_t c = 0; c < u.size(); ++c) {
            if (!(std::abs(u[c]) <= kBlowUp)) {
                throw DivergenceError("ks: solution blew up at t = " + std::to_string(traj.times.back()));
            }
            traj.states(row, c) = u[c];
        }
    };
    store(0, 0);
    std::vector<cd> a(modes), b(modes), c(modes);
    std::size_t steps = 0;
    for (std::size_t out = 1; out < config.n_outputs; ++out) {
        for (std::size_t s = 0; s < config.stride; ++s) {
            const auto nv = ks.nonlinear(v);
            for (std::size_t j = 0; j < modes; ++j) a[j] = e2[j] * v[j] + q[j] * nv[j];
            const auto na = ks.nonlinear(a);
            for (std::size_t j = 0; j < modes; ++j) b[j] = e2[j] * v[j] + q[j] * na[j];
            const auto nb = ks.nonlinear(b);
            for (std::size_t j = 0; j < modes; ++j) c[j] = e2[j] * a[j] + q[j] * (2.0 * nb[j] - nv[j]);
            const auto nc = ks.nonlinear(c);
            for (std::size_t j = 0; j < modes; ++j) {
                v[j] = e[j] * v[j] + nv[j] * f1[j] + 2.0 * (na[j] + nb[j]) * f2[j] + nc[j] * f3[j];
            }
            ++steps;
        }
        store(out, steps);
    }
    return traj;
}

Dataset split_series(const Trajectory& trajectory, std::size_t n_series, std::size_t length) {
    if (n_series == 0 || length == 0) throw ParameterError("split_series: need at least one series of one point");
    if (n_series * length > trajectory.size()) {
        throw ParameterError("split_series: " + std::to_string(n_series) + " x " + std::to_string(length) +
                             " points requested from a trajectory of " + std::to_string(trajectory.size()));
    }
    Dataset d;
    d.state_dim = trajectory.states.cols();
    for (std::size_t k = 0; k < n_series; ++k) {
        std::vector<std::size_t> rows(length);
        std::iota(rows.begin(), rows.end(), k * length);
        d.series.push_back(take_rows(trajectory, rows));
    }
    return d;
}

Dataset gen_ks(const KsConfig& config, std::uint64_t seed) {
    const Trajectory traj = etdrk4_ks(config, seed);
    Dataset d = split_series(traj, config.n_series, config.points_per_series);
    const nlohmann::json cfg = config.to_json();
    d.metadata = {{"generator", "ks"}, {"config", cfg}, {"config_digest", config_digest(cfg)}, {"seed", seed}};
    return d;
}

}  // namespace tsrom
