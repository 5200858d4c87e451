#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "helpers.hpp"
#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/optimize.hpp"

using namespace tsrom;
namespace fs = std::filesystem;

namespace {

Dataset decaying_dataset(std::size_t n_series, std::size_t len) {
    // x(t) = (Re, Im) of a damped rotation, sampled at slightly uneven steps.
    Dataset d;
    d.state_dim = 2;
    for (std::size_t k = 0; k < n_series; ++k) {
        Series s;
        std::vector<std::vector<double>> rows;
        double t = 0.05 * static_cast<double>(k);
        for (std::size_t i = 0; i < len; ++i) {
            const Complex z = Complex(1.0, 0.5) * std::exp(-Complex(0.4, 1.5) * t);
            s.times.push_back(t);
            rows.push_back({z.real(), z.imag()});
            t += 0.1 + 0.02 * static_cast<double>(i % 3);
        }
        s.states = Tensor::from_rows(rows);
        d.series.push_back(s);
    }
    return d;
}

Model small_model(Variant variant, std::uint64_t seed) {
    ArchitectureSpec s;
    s.input_dim = 2;
    s.latent_dim = 1;
    s.kind = ArchitectureKind::linear;
    return init_model(s, variant, seed);
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tsrom-unit-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor w = Tensor::vector({0.5, -1.0, 2.0});
    const Tensor before = w;
    const std::vector<ParamBlock> blocks{{"w", &w}};
    const std::vector<Tensor> grads{Tensor::vector({0.0, 0.0, 0.0})};
    AdamState state;
    adam_step(blocks, grads, state);
    CHECK(w == before);
    CHECK(state.step == 1);
}

TEST_CASE("adam: first step from a fresh state") {
    Tensor w = Tensor::vector({0.5, -1.0, 2.0});
    const std::vector<double> g{0.3, -4.0, 1e-3};
    const std::vector<ParamBlock> blocks{{"w", &w}};
    const std::vector<Tensor> grads{Tensor::vector(g)};
    AdamState state;
    state.hyper.learning_rate = 0.01;
    adam_step(blocks, grads, state);
    // Bias correction makes m_hat = g and v_hat = g^2 after one step.
    const std::vector<double> start{0.5, -1.0, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
        const double expect = start[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
        CHECK(w[i] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("adam: quadratic bowl converges") {
    Tensor x = Tensor::vector({0.8, -0.5, 0.3});
    const std::vector<double> curvature{1.0, 3.0, 0.5};
    const std::vector<ParamBlock> blocks{{"x", &x}};
    AdamState state;
    state.hyper.learning_rate = 1e-2;
    for (int k = 0; k < 500; ++k) {
        Tensor g(1, 3);
        g = Tensor::vector({curvature[0] * x[0], curvature[1] * x[1], curvature[2] * x[2]});
        const std::vector<Tensor> grads{g};
        adam_step(blocks, grads, state);
    }
    CHECK(frobenius_norm(x) <= 1e-3);
}

TEST_CASE("adam: non-finite gradients name the block and leave parameters alone") {
    Tensor a = Tensor::vector({1.0, 2.0});
    Tensor b = Tensor::vector({3.0});
    const std::vector<ParamBlock> blocks{{"encoder.0.weight", &a}, {"spectrum", &b}};
    const std::vector<Tensor> grads{Tensor::vector({0.1, 0.2}), Tensor::vector({std::nan("")})};
    AdamState state;
    try {
        adam_step(blocks, grads, state);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("spectrum") != std::string::npos);
    }
    CHECK(a == Tensor::vector({1.0, 2.0}));
    CHECK(b == Tensor::vector({3.0}));
    CHECK(state.step == 0);

    const std::vector<Tensor> wrong{Tensor::vector({0.1}), Tensor::vector({0.0})};
    CHECK_THROWS_AS(adam_step(blocks, wrong, state), DimensionError);
}

TEST_CASE("minibatch windows") {
    Dataset d = decaying_dataset(3, 10);
    std::mt19937_64 rng(1);
    const auto whole = sample_windows(d, 10, 5, rng);
    for (const auto& w : whole) {
        CHECK(w.offset == 0);
        CHECK(w.length == 10);
    }
    CHECK_THROWS_AS(sample_windows(d, 11, 2, rng), ParameterError);
    CHECK_THROWS_AS(sample_windows(d, 0, 2, rng), ParameterError);
    CHECK_THROWS_AS(sample_windows(d, 3, 0, rng), ParameterError);

    const Batch b = minibatch(d, 4, 3, rng);
    CHECK(b.size() == 12);
    CHECK(b.pairs() == 9);
    for (double g : b.gaps) CHECK(g > 0.0);
}

TEST_CASE("minibatch sampling is uniform over series and offsets") {
    // Series of lengths 6, 9 and 4 with window 5: the last one is never eligible.
    Dataset d = decaying_dataset(3, 9);
    d.series[0].times.resize(6);
    d.series[0].states = Tensor(std::vector<std::size_t>{6, 2},
                                std::vector<double>(d.series[0].states.data(), d.series[0].states.data() + 12));
    d.series[2].times.resize(4);
    d.series[2].states = Tensor(std::vector<std::size_t>{4, 2},
                                std::vector<double>(d.series[2].states.data(), d.series[2].states.data() + 8));
    const std::size_t window = 5;

    std::map<std::pair<std::size_t, std::size_t>, double> expected;
    expected[{0, 0}] = expected[{0, 1}] = 0.5 / 2.0;
    for (std::size_t o = 0; o < 5; ++o) expected[{1, o}] = 0.5 / 5.0;

    std::map<std::pair<std::size_t, std::size_t>, double> counts;
    std::mt19937_64 rng(2);
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) {
        for (const auto& w : sample_windows(d, window, 1, rng)) counts[{w.series, w.offset}] += 1.0;
    }
    double chi2 = 0.0;
    for (const auto& [cell, p] : expected) {
        const double e = p * static_cast<double>(draws);
        chi2 += (counts[cell] - e) * (counts[cell] - e) / e;
    }
    CHECK(counts.size() == expected.size());
    const boost::math::chi_squared dist(static_cast<double>(expected.size() - 1));
    const double p_value = boost::math::cdf(boost::math::complement(dist, chi2));
    CHECK(p_value > 0.01);
}

TEST_CASE("train: zero iterations returns the initial model") {
    const Dataset d = decaying_dataset(2, 8);
    const Model m = small_model(Variant::deterministic, 3);
    TrainConfig cfg;
    cfg.iterations = 0;
    const auto r = train(d, m, cfg);
    CHECK(model_to_json(r.model).dump() == model_to_json(m).dump());
    CHECK(r.log.entries.empty());
    CHECK(r.final_state.iteration == 0);
}

TEST_CASE("train: deterministic and probabilistic runs are reproducible") {
    const Dataset d = decaying_dataset(3, 12);
    for (auto variant : {Variant::deterministic, Variant::probabilistic}) {
        TrainConfig cfg;
        cfg.iterations = 60;
        cfg.log_every = 7;
        cfg.seed = 5;
        cfg.batch_size = 2;
        cfg.window = 5;
        cfg.adam.learning_rate = 1e-2;
        const Model m = small_model(variant, 4);
        const auto a = train(d, m, cfg);
        const auto b = train(d, m, cfg);
        CHECK(a.log.to_jsonl() == b.log.to_jsonl());
        CHECK(a.final_state.to_json().dump() == b.final_state.to_json().dump());
        // Logged at every 7th iteration and at the last one.
        REQUIRE(a.log.entries.size() == 10);
        CHECK(a.log.entries.back().iteration == 59);
        cfg.seed = 6;
        const auto c = train(d, m, cfg);
        CHECK(c.log.to_jsonl() != a.log.to_jsonl());
    }
}

TEST_CASE("train: loss falls and the spectrum moves toward the generator") {
    const Dataset d = decaying_dataset(4, 15);
    TrainConfig cfg;
    cfg.iterations = 3000;
    cfg.log_every = 100;
    cfg.adam.learning_rate = 2e-2;
    cfg.seed = 1;
    const auto r = train(d, small_model(Variant::deterministic, 2), cfg);
    CHECK(r.log.entries.back().total < 0.1 * r.log.entries.front().total);
    // A rotation is identified only up to conjugation.
    const auto lam = r.model.spectrum().lambda[0];
    CHECK(lam.real() == doctest::Approx(0.4).epsilon(0.05));
    CHECK(std::abs(lam.imag()) == doctest::Approx(1.5).epsilon(0.05));
}

TEST_CASE("train: resuming from a checkpoint reproduces the uninterrupted run") {
    const Dataset d = decaying_dataset(3, 12);
    const fs::path dir = scratch_dir("resume");
    for (auto variant : {Variant::deterministic, Variant::probabilistic}) {
        TrainConfig cfg;
        cfg.iterations = 40;
        cfg.log_every = 5;
        cfg.seed = 9;
        cfg.batch_size = 2;
        cfg.window = 4;
        cfg.config_digest = "abc";
        cfg.checkpoint_every = 15;
        cfg.checkpoint_dir = dir;
        const Model m = small_model(variant, 7);
        const auto straight = train(d, m, cfg);

        TrainConfig first = cfg;
        first.iterations = 15;
        train(d, m, first);
        const auto ckpt = load_checkpoint(dir / "checkpoint.json");
        CHECK(ckpt.iteration == 15);
        const auto resumed = train(d, m, cfg, &ckpt);
        CHECK(resumed.final_state.to_json().dump() == straight.final_state.to_json().dump());
        // The resumed log covers the iterations after the checkpoint.
        TrainLog tail = straight.log;
        std::erase_if(tail.entries, [](const TrainLogEntry& e) { return e.iteration < 15; });
        CHECK(resumed.log.to_jsonl() == tail.to_jsonl());

        TrainConfig other = cfg;
        other.config_digest = "xyz";
        CHECK_THROWS_AS(train(d, m, other, &ckpt), DigestMismatchError);
    }
    fs::remove_all(dir);
}

TEST_CASE("train: divergence aborts and keeps the last checkpoint") {
    const Dataset d = decaying_dataset(2, 10);
    const fs::path dir = scratch_dir("diverge");
    Model m = small_model(Variant::deterministic, 1);
    TrainConfig cfg;
    cfg.iterations = 10;
    cfg.checkpoint_every = 1;
    cfg.checkpoint_dir = dir;
    m.spectrum_raw = Tensor::vector({-8000.0, 0.0});
    CHECK_THROWS_AS(train(d, m, cfg), DivergenceError);
    CHECK_FALSE(fs::exists(dir / "checkpoint.json"));

    // A healthy run leaves a checkpoint that survives a later failure.
    m.spectrum_raw = Tensor::vector({0.5, 1.0});
    cfg.iterations = 3;
    train(d, m, cfg);
    const std::string saved = read_file(dir / "checkpoint.json");
    Model bad = m;
    bad.spectrum_raw = Tensor::vector({-8000.0, 0.0});
    CHECK_THROWS_AS(train(d, bad, cfg), DivergenceError);
    CHECK(read_file(dir / "checkpoint.json") == saved);
    fs::remove_all(dir);
}

TEST_CASE("train log and checkpoint serialisation") {
    const Dataset d = decaying_dataset(2, 8);
    TrainConfig cfg;
    cfg.iterations = 12;
    cfg.log_every = 3;
    cfg.seed = 4;
    cfg.config_digest = "d1";
    const auto r = train(d, small_model(Variant::probabilistic, 2), cfg);
    const std::string text = r.log.to_jsonl();
    const TrainLog back = TrainLog::from_jsonl(text);
    CHECK(back.seed == 4);
    CHECK(back.config_digest == "d1");
    CHECK(back.to_jsonl() == text);
    CHECK(text.find("wall") == std::string::npos);
    CHECK(r.log.to_jsonl(true).find("wall") != std::string::npos);
    CHECK_THROWS_AS(TrainLog::from_jsonl("{not json"), IoError);

    const auto j = r.final_state.to_json();
    CHECK(TrainCheckpoint::from_json(j).to_json().dump() == j.dump());
    auto broken = j;
    broken["format"] = "other";
    CHECK_THROWS_AS(TrainCheckpoint::from_json(broken), IoError);
}
