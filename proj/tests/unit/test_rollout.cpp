#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "../support/ou_oracle.hpp"
#include "helpers.hpp"
#include "tsrom/errors.hpp"
#include "tsrom/model.hpp"
#include "tsrom/rollout.hpp"

using namespace tsrom;

namespace {

ArchitectureSpec linear_spec(std::size_t f, std::size_t c) {
    ArchitectureSpec s;
    s.input_dim = f;
    s.latent_dim = c;
    s.kind = ArchitectureKind::linear;
    return s;
}

// Hand-built model that is exact for dy/dt = [[-5, 2], [2, -5]] y:
// z0 = (y1 + y2)/2 decays at 3, z1 = (y1 - y2)/2 decays at 7.
Model exact_linear_ode_model() {
    Model m = init_model(linear_spec(2, 2), Variant::deterministic, 1);
    auto& enc = m.encoder.layers[0];
    enc.weight.fill(0.0);
    enc.bias.fill(0.0);
    enc.weight(0, 0) = 0.5;
    enc.weight(1, 0) = 0.5;
    enc.weight(0, 2) = 0.5;
    enc.weight(1, 2) = -0.5;
    auto& dec = m.decoder.layers[0];
    dec.weight.fill(0.0);
    dec.bias.fill(0.0);
    dec.weight(0, 0) = 1.0;
    dec.weight(0, 1) = 1.0;
    dec.weight(2, 0) = 1.0;
    dec.weight(2, 1) = -1.0;
    m.spectrum_raw = Tensor(std::vector<std::size_t>{1, 4}, {3.0, 0.0, 7.0, 0.0});
    return m;
}

std::vector<double> uniform_times(double t0, double dt, std::size_t n) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = t0 + dt * static_cast<double>(i);
    return t;
}

Tensor sample_function(const std::vector<double>& times, std::size_t channels, double (*fn)(double, std::size_t)) {
    Tensor s(times.size(), channels);
    for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t k = 0; k < channels; ++k) s(i, k) = fn(times[i], k);
    return s;
}

Model probabilistic_model(std::uint64_t seed) {
    auto spec = linear_spec(4, 2);
    Model m = init_model(spec, Variant::probabilistic, seed);
    m.spectrum_raw = Tensor(std::vector<std::size_t>{1, 4},
                            raw_from_positive_spectrum(SpectrumParams{{{0.4, 1.1}, {1.3, -0.6}}}));
    return m;
}

}  // namespace

TEST_CASE("deterministic rollout reconstructs at the anchor time") {
    const Model m = init_model(linear_spec(4, 2), Variant::deterministic, 3);
    const std::vector<double> x{0.3, -1.2, 0.8, 2.0};
    const std::vector<double> q{1.5};
    const Rollout r = rollout_deterministic(m, x, 1.5, q);
    const auto recon = decode(encode(x, m.encoder), m.decoder);
    for (std::size_t k = 0; k < 4; ++k) CHECK(r.mean(0, k) == recon[k]);
    CHECK_FALSE(r.probabilistic);

    CHECK_THROWS_AS(rollout_deterministic(m, std::vector<double>{1.0, 2.0}, 0.0, q), DimensionError);
    CHECK_THROWS_AS(rollout_deterministic(m, x, 2.0, q), ParameterError);
    const std::vector<double> unordered{2.0, 1.9};
    CHECK_THROWS_AS(rollout_deterministic(m, x, 0.0, unordered), ParameterError);
    CHECK_THROWS_AS(rollout_deterministic(m, x, 0.0, std::vector<double>{}), ParameterError);
}

TEST_CASE("an exact linear model reproduces the matrix exponential") {
    const Model m = exact_linear_ode_model();
    Eigen::Matrix2d A;
    A << -5.0, 2.0, 2.0, -5.0;
    const Eigen::Vector2d y0(10.0, -3.0);
    const auto q = uniform_times(0.0, 0.05, 41);
    const Rollout r = rollout_deterministic(m, std::vector<double>{10.0, -3.0}, 0.0, q);
    for (std::size_t t = 0; t < q.size(); ++t) {
        const Eigen::Vector2d y = (A * q[t]).exp() * y0;
        CHECK(std::abs(r.mean(t, 0) - y(0)) <= 1e-6 * std::max(1.0, y.norm()));
        CHECK(std::abs(r.mean(t, 1) - y(1)) <= 1e-6 * std::max(1.0, y.norm()));
    }
}

TEST_CASE("one long jump equals chained short jumps") {
    Model m = init_model(linear_spec(5, 2), Variant::deterministic, 8);
    m.spectrum_raw = Tensor(std::vector<std::size_t>{1, 4}, {0.3, 2.0, 1.1, -0.7});
    std::mt19937_64 rng(9);
    const Tensor x = tsrom::test::random_tensor(1, 5, rng);
    const std::vector<double> far{2.0};
    const Rollout direct = rollout_deterministic(m, x.values(), 0.0, far);

    LatentState z = encode(x.values(), m.encoder);
    for (int k = 0; k < 16; ++k) z = propagate(z, m.spectrum(), 0.125);
    for (std::size_t i = 0; i < 2; ++i) {
        const Complex d(direct.latent_mean(0, 2 * i), direct.latent_mean(0, 2 * i + 1));
        CHECK(std::abs(d - z[i]) <= 1e-12 * std::max(1.0, std::abs(z[i])));
    }
}

TEST_CASE("probabilistic rollout: anchor, long-time limit and monotone variance") {
    const Model m = probabilistic_model(4);
    std::mt19937_64 rng(5);
    const std::vector<double> x{0.5, -0.2, 1.0, 0.1};
    const auto q = uniform_times(0.0, 0.25, 81);
    const Rollout r = rollout_probabilistic(m, x, 0.0, q, 4000, rng);
    CHECK(r.probabilistic);
    const auto post = encode_variational(x, m.encoder);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(r.latent_variance(0, i) == doctest::Approx(post.variance[i]).epsilon(1e-12));
        CHECK(r.latent_mean(0, 2 * i) == doctest::Approx(post.mean[i].real()).epsilon(1e-12));
    }
    for (std::size_t k = 0; k < 4; ++k) CHECK(r.variance(0, k) > 0.0);

    // After many decay times the tied prior forgets the anchor: mean 0, variance 1.
    const std::vector<double> late{200.0};
    const Rollout lim = rollout_probabilistic(m, x, 0.0, late, 10, rng);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::abs(lim.latent_mean(0, 2 * i)) <= 1e-12);
        CHECK(std::abs(lim.latent_mean(0, 2 * i + 1)) <= 1e-12);
        CHECK(lim.latent_variance(0, i) == doctest::Approx(1.0).epsilon(1e-12));
    }

    // With the posterior variance below the stationary value the spread only grows.
    for (std::size_t i = 0; i < 2; ++i) {
        if (post.variance[i] > 1.0) continue;
        for (std::size_t t = 1; t < q.size(); ++t) CHECK(r.latent_variance(t, i) >= r.latent_variance(t - 1, i));
    }
}

TEST_CASE("probabilistic rollout latent moments match a simulated OU path ensemble") {
    const Model m = probabilistic_model(6);
    const std::vector<double> x{-0.4, 0.9, 0.3, -1.1};
    const double dt = 0.9;
    std::mt19937_64 rng(7);
    const Rollout r = rollout_probabilistic(m, x, 0.0, std::vector<double>{dt}, 10, rng);
    const auto post = encode_variational(x, m.encoder);
    const auto lambda = m.spectrum();
    for (std::size_t i = 0; i < 2; ++i) {
        const Complex l = lambda.lambda[i];
        // Fixed start at the posterior mean; the spread of the start adds |exp(-lambda dt)|^2 v0.
        const auto sim = tsrom::test::euler_maruyama_ou(post.mean[i], l, 2.0 * l.real(), dt, 800, 20000, 100 + i);
        const double expected = sim.variance + std::exp(-2.0 * l.real() * dt) * post.variance[i];
        CAPTURE(i);
        CHECK(std::abs(r.latent_variance(0, i) - expected) <= 3.0 * sim.variance_se + 2e-3);
        const Complex mean(r.latent_mean(0, 2 * i), r.latent_mean(0, 2 * i + 1));
        CHECK(std::abs(mean.real() - sim.mean.real()) <= 3.0 * sim.mean_se + 2e-3);
        CHECK(std::abs(mean.imag() - sim.mean.imag()) <= 3.0 * sim.mean_se + 2e-3);
    }
}

TEST_CASE("probabilistic rollout rejects unsuitable inputs") {
    const Model m = probabilistic_model(2);
    std::mt19937_64 rng(1);
    const std::vector<double> x{0.0, 0.0, 0.0, 0.0};
    const std::vector<double> q{1.0};
    OUParams untied = tie_sfa(m.spectrum());
    untied.sigma_sq[0] *= 2.0;
    CHECK_THROWS_AS(rollout_probabilistic(m, x, 0.0, q, 10, rng, &untied), ConfigError);
    const OUParams tied = tie_sfa(m.spectrum());
    CHECK_NOTHROW(rollout_probabilistic(m, x, 0.0, q, 10, rng, &tied));
    const Model det = init_model(linear_spec(4, 2), Variant::deterministic, 2);
    CHECK_THROWS_AS(rollout_probabilistic(det, x, 0.0, q, 10, rng), ConfigError);
    CHECK_THROWS_AS(rollout_probabilistic(m, x, 0.0, q, 0, rng), ParameterError);
}

TEST_CASE("phase cloud derivatives") {
    const auto t = uniform_times(0.0, 0.01, 629);
    const Tensor flat = sample_function(t, 3, [](double, std::size_t k) { return 2.0 + static_cast<double>(k); });
    const PhaseCloud c0 = phase_cloud(t, flat);
    CHECK(c0.size() == 627 * 3);
    for (double d : c0.dudt) CHECK(d == 0.0);

    const Tensor sine = sample_function(t, 1, [](double s, std::size_t) { return std::sin(s); });
    const PhaseCloud c1 = phase_cloud(t, sine);
    double worst = 0.0;
    for (std::size_t i = 0; i < c1.size(); ++i) worst = std::max(worst, std::abs(c1.dudt[i] - std::cos(t[i + 1])));
    CHECK(worst <= 1e-4);

    const Tensor line = sample_function(t, 2, [](double s, std::size_t k) { return (k ? -3.0 : 1.5) * s + 0.2; });
    const PhaseCloud c2 = phase_cloud(t, line);
    for (std::size_t i = 0; i < c2.size(); ++i) CHECK(c2.dudt[i] == doctest::Approx(i % 2 ? -3.0 : 1.5).epsilon(1e-10));

    // Halving the step quarters the error of the central difference.
    auto error_at = [](double h) {
        const auto tt = uniform_times(0.0, h, 3);
        const Tensor s = sample_function(tt, 1, [](double v, std::size_t) { return std::exp(v); });
        return std::abs(phase_cloud(tt, s).dudt[0] - std::exp(h));
    };
    CHECK(error_at(0.02) / error_at(0.01) == doctest::Approx(4.0).epsilon(0.02));

    auto bent = t;
    bent[10] += 0.004;
    CHECK_THROWS_AS(phase_cloud(bent, sine), ParameterError);
    CHECK_THROWS_AS(phase_cloud(std::vector<double>{0.0, 1.0}, Tensor(2, 1)), ParameterError);
}

TEST_CASE("phase overlap") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal;
    PhaseCloud a, far;
    for (int i = 0; i < 2000; ++i) {
        a.u.push_back(normal(rng));
        a.dudt.push_back(normal(rng));
        far.u.push_back(50.0 + normal(rng));
        far.dudt.push_back(50.0 + normal(rng));
    }
    const PhaseGrid g = PhaseGrid::bounding(a, 20, 20);
    CHECK(phase_overlap(a, a, g) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(phase_overlap(a, far, g) == doctest::Approx(0.0).epsilon(1e-12));

    PhaseCloud b;
    for (int i = 0; i < 2000; ++i) {
        b.u.push_back(normal(rng));
        b.dudt.push_back(normal(rng));
    }
    const double same = phase_overlap(a, b, g);
    CHECK(same > 0.7);
    CHECK(same < 1.0);
    CHECK_THROWS_AS(phase_overlap(a, PhaseCloud{}, g), ParameterError);
    CHECK_THROWS_AS(PhaseGrid::bounding(PhaseCloud{}, 4, 4), ParameterError);
}

TEST_CASE("metrics") {
    const auto t = uniform_times(0.0, 0.1, 20);
    const Tensor ref = sample_function(t, 3, [](double s, std::size_t k) { return std::cos(s + static_cast<double>(k)) + 2.0; });
    Rollout pred;
    pred.times = t;
    pred.mean = ref;
    const auto exact = metrics(pred, t, ref);
    for (double e : exact.relative_error) CHECK(e == 0.0);
    CHECK(exact.mean_relative_error == 0.0);
    CHECK_FALSE(exact.coverage.has_value());

    // A relative offset of delta in every channel gives error delta.
    const double delta = 0.03;
    for (std::size_t i = 0; i < pred.mean.rows(); ++i)
        for (std::size_t k = 0; k < pred.mean.cols(); ++k) pred.mean(i, k) *= 1.0 + delta;
    const auto off = metrics(pred, t, ref);
    for (double e : off.relative_error) CHECK(e == doctest::Approx(delta).epsilon(1e-12));

    // Gaussian scatter with the stated variance is covered about 95% of the time.
    std::mt19937_64 rng(12);
    std::normal_distribution<double> normal;
    const std::size_t n = 20000;
    Rollout cal;
    cal.probabilistic = true;
    cal.times = uniform_times(0.0, 1.0, n);
    cal.mean = Tensor(n, 1);
    cal.variance = Tensor(n, 1);
    Tensor obs(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        cal.variance(i, 0) = 0.25 + static_cast<double>(i % 7);
        obs(i, 0) = 1.0 + std::sqrt(cal.variance(i, 0)) * normal(rng);
        cal.mean(i, 0) = 1.0;
    }
    const auto rep = metrics(cal, cal.times, obs);
    REQUIRE(rep.coverage.has_value());
    CHECK(*rep.coverage == doctest::Approx(0.9545).epsilon(0.02));

    auto shifted = t;
    shifted[3] += 0.01;
    pred.mean = ref;
    CHECK_THROWS_AS(metrics(pred, shifted, ref), ParameterError);
    CHECK_THROWS_AS(metrics(pred, std::vector<double>(t.begin(), t.end() - 1), ref), ParameterError);
}

TEST_CASE("rollout tables round trip") {
    const Model m = probabilistic_model(13);
    std::mt19937_64 rng(14);
    const auto q = uniform_times(0.5, 0.3, 6);
    const Rollout r = rollout_probabilistic(m, std::vector<double>{0.2, 0.1, -0.3, 0.4}, 0.5, q, 50, rng);
    const Table t = rollout_table(r);
    CHECK(t.columns.front() == "time");
    CHECK(t.has("zvar1"));
    const Table back = parse_table(format_table(t));
    CHECK(back.columns == t.columns);
    CHECK(back.rows == t.rows);  // 17 significant digits round-trip exactly
    const Rollout rb = rollout_from_table(back);
    CHECK(rb.probabilistic);
    CHECK(rb.times == r.times);
    CHECK(rb.mean == r.mean);
    CHECK(rb.variance == r.variance);

    const auto dir = std::filesystem::temp_directory_path() / "tsrom_table_test";
    std::filesystem::create_directories(dir);
    write_table(t, dir / "pred.csv");
    CHECK(read_table(dir / "pred.csv").rows == t.rows);
    std::filesystem::remove_all(dir);

    Table missing;
    missing.columns = {"time", "y0"};
    missing.rows = {{0.0, 1.0}};
    try {
        rollout_from_table(missing);
        FAIL("expected an IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("x0") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_table("a,b\n1,2,3\n"), IoError);
    CHECK_THROWS_AS(parse_table("a,b\n1,zz\n"), IoError);
}
