#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tsrom/cli.hpp"
#include "tsrom/config.hpp"
#include "tsrom/dataset.hpp"
#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/model.hpp"
#include "tsrom/networks.hpp"
#include "tsrom/rollout.hpp"

using namespace tsrom;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("tsrom_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& s) const { return path / s; }
};

struct Outcome {
    int code;
    std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

const char* kLinearConfig = R"([run]
experiment = linear-ode
seed = 3

[train]
iterations = 0
log_every = 5
)";

}  // namespace

TEST_CASE("config parsing: defaults per experiment") {
    const RunConfig lin = parse_run_config("[run]\nexperiment = linear-ode\n");
    CHECK(lin.architecture.input_dim == 2);
    CHECK(lin.architecture.latent_dim == 2);
    CHECK(lin.architecture.kind == ArchitectureKind::linear);
    CHECK(lin.train.iterations == 5000);
    CHECK(lin.variant == Variant::deterministic);

    const RunConfig ms = parse_run_config("[run]\nexperiment = multiscale\n");
    CHECK(ms.architecture.input_dim == 8);
    CHECK(ms.train.adam.learning_rate == 1e-3);

    const RunConfig ks = parse_run_config("[run]\nexperiment = ks\nvariant = probabilistic\n");
    CHECK(ks.architecture.kind == ArchitectureKind::mlp4);
    CHECK(ks.architecture.input_dim == 64);
    CHECK(ks.architecture.latent_dim == 5);
    CHECK(ks.train.iterations == 200000);
    CHECK(ks.train.batch_size == 8);
    CHECK(ks.train.window == 25);
    CHECK(ks.variant == Variant::probabilistic);

    const RunConfig custom = parse_run_config(
        "[run]\nexperiment = multiscale\nseed = 9\n[data]\nrates = -0.2 2; -1 0.5\n[model]\nlatent_dim = 2\n"
        "[train]\nlearning_rate = 0.01\n");
    CHECK(custom.seed == 9);
    CHECK(custom.train.seed == 9);
    CHECK(custom.multiscale.rates.at(0) == Complex(-0.2, 2.0));
    CHECK(custom.train.adam.learning_rate == 0.01);
    CHECK(custom.digest() != ms.digest());
    CHECK(custom.data_digest() != ms.data_digest());
}

TEST_CASE("config parsing rejects unknown or malformed entries") {
    auto message = [](const std::string& text) {
        try {
            parse_run_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message("[run]\nexperiment = linear-ode\n[train]\nlernrate = 1\n").find("[train] lernrate") !=
          std::string::npos);
    CHECK(message("[run]\nexperiment = ks\n[data]\nrates = 1 2\n").find("[data] rates") != std::string::npos);
    CHECK(message("[run]\nexperiment = ks\n[extras]\na = 1\n").find("[extras]") != std::string::npos);
    CHECK(message("[run]\nseed = 1\n").find("experiment") != std::string::npos);
    CHECK(message("[run]\nexperiment = pendulum\n").find("pendulum") != std::string::npos);
    CHECK(message("[run]\nexperiment = ks\n[train]\niterations = many\n").find("[train] iterations") !=
          std::string::npos);
    CHECK(message("[run]\nexperiment = ks\n[train]\niterations = -4\n").find("non-negative") != std::string::npos);
    CHECK(message("[run]\nexperiment = ks\n[train]\nlearning_rate = 0\n").find("learning_rate") != std::string::npos);
    CHECK(message("[run]\nexperiment = linear-ode\n[model]\nlatent_dim = 3\n").find("[model]") != std::string::npos);
    CHECK(message("[run]\nexperiment = linear-ode\nvariant = fuzzy\n").find("variant") != std::string::npos);
}

TEST_CASE("cli: usage errors") {
    CHECK(cli({}).code == exit_code::usage);
    CHECK(cli({"frobnicate"}).code == exit_code::usage);
    CHECK(cli({"generate"}).code == exit_code::usage);
    CHECK(cli({"--help"}).code == exit_code::ok);
}

TEST_CASE("cli: generate, train, predict, evaluate, export-plots") {
    TempDir tmp("cli_flow");
    const fs::path config = tmp / "linear.ini";
    write(config, kLinearConfig);

    SUBCASE("bad config exits with the config code") {
        const fs::path bad = tmp / "bad.ini";
        write(bad, "[run]\nexperiment = linear-ode\n[train]\nspeed = 3\n");
        const auto r = cli({"generate", "--config", bad.string(), "--out", (tmp / "never").string()});
        CHECK(r.code == exit_code::config);
        CHECK(r.err.find("[train] speed") != std::string::npos);
    }

    const fs::path data = tmp / "data";
    REQUIRE(cli({"generate", "--config", config.string(), "--out", data.string()}).code == exit_code::ok);
    const Dataset d = read_dataset(data);
    CHECK(d.series.size() == 40);
    for (const auto& s : d.series) CHECK(s.size() == 150);
    CHECK(fs::exists(data / "run_manifest.json"));

    SUBCASE("generation is byte-identical across runs") {
        const fs::path again = tmp / "again";
        REQUIRE(cli({"generate", "--config", config.string(), "--out", again.string()}).code == exit_code::ok);
        for (const char* f : {"series.bin", "series.txt", "manifest.json"}) {
            CHECK(read_file(data / f) == read_file(again / f));
        }
    }

    SUBCASE("a corrupted dataset is an io error") {
        const fs::path broken = tmp / "broken";
        fs::copy(data, broken);
        std::string bytes = read_file(broken / "series.bin");
        bytes[bytes.size() / 2] ^= 0x5a;
        write(broken / "series.bin", bytes);
        const auto r = cli({"train", "--config", config.string(), "--dataset", broken.string(), "--out",
                            (tmp / "t").string()});
        CHECK(r.code == exit_code::io);
    }

    SUBCASE("a dataset from other settings is a digest mismatch") {
        const fs::path other = tmp / "other.ini";
        write(other, std::string(kLinearConfig) + "[data]\nt_max = 1.5\n");
        const auto r =
            cli({"train", "--config", other.string(), "--dataset", data.string(), "--out", (tmp / "t").string()});
        CHECK(r.code == exit_code::digest);
    }

    const fs::path run = tmp / "run";
    REQUIRE(cli({"train", "--config", config.string(), "--dataset", data.string(), "--out", run.string()}).code ==
            exit_code::ok);
    // Zero iterations return the initial model.
    const Model trained = load_model(run / "model.json");
    const RunConfig rc = load_run_config(config);
    const Model initial = init_model(rc.architecture, rc.variant, rc.seed);
    CHECK(trained.spectrum_raw == initial.spectrum_raw);
    CHECK(trained.encoder.layers[0].weight == initial.encoder.layers[0].weight);

    SUBCASE("predict reconstructs at the anchor time") {
        const Series& s = d.series[2];
        std::ostringstream t0;
        t0.precision(17);
        t0 << s.times[4];
        const fs::path pred = tmp / "pred";
        const auto r = cli({"predict", "--model", (run / "model.json").string(), "--dataset", data.string(),
                            "--anchor", "2:4", "--times", t0.str() + ",1.5,1.75", "--config",
                            config.string(), "--out", pred.string()});
        REQUIRE(r.code == exit_code::ok);
        const Rollout roll = rollout_from_table(read_table(pred / "rollout.csv"));
        REQUIRE(roll.size() == 3);
        const std::vector<double> x{s.states(4, 0), s.states(4, 1)};
        const auto recon = decode(encode(x, trained.encoder), trained.decoder);
        CHECK(roll.mean(0, 0) == doctest::Approx(recon[0]).epsilon(1e-9));
        CHECK(roll.mean(0, 1) == doctest::Approx(recon[1]).epsilon(1e-9));
        CHECK(fs::exists(pred / "reference.csv"));

        // Prediction equal to the reference scores zero error.
        const auto ev = cli({"evaluate", "--pred", (pred / "reference.csv").string(), "--ref",
                             (pred / "reference.csv").string(), "--out", (tmp / "eval").string()});
        REQUIRE(ev.code == exit_code::ok);
        const auto report = nlohmann::json::parse(read_file(tmp / "eval" / "metrics.json"));
        CHECK(report["mean_relative_error"].get<double>() == 0.0);

        const auto ex = cli({"export-plots", "--run", pred.string()});
        CHECK(ex.code == exit_code::ok);
        CHECK(fs::exists(pred / "plots" / "trajectory.csv"));
    }

    SUBCASE("an anchor of the wrong width is a dimension error") {
        write(tmp / "anchor.txt", "1.0 2.0 3.0\n");
        const auto r = cli({"predict", "--model", (run / "model.json").string(), "--anchor",
                            (tmp / "anchor.txt").string(), "--times", "0.5", "--out", (tmp / "p").string()});
        CHECK(r.code == exit_code::dimension);
    }

    SUBCASE("a missing reference column is an io error") {
        write(tmp / "ref.csv", "time,y0\n0,1\n");
        write(tmp / "pred.csv", "time,x0\n0,1\n");
        const auto r = cli({"evaluate", "--pred", (tmp / "pred.csv").string(), "--ref", (tmp / "ref.csv").string(),
                            "--out", (tmp / "e").string()});
        CHECK(r.code == exit_code::io);
        CHECK(r.err.find("x0") != std::string::npos);
    }
}

TEST_CASE("cli: short training runs are reproducible and export their logs") {
    TempDir tmp("cli_train");
    const fs::path config = tmp / "linear.ini";
    write(config, std::string(kLinearConfig).replace(std::string(kLinearConfig).find("iterations = 0"),
                                                      std::string("iterations = 0").size(), "iterations = 23"));
    const fs::path data = tmp / "data";
    REQUIRE(cli({"generate", "--config", config.string(), "--out", data.string()}).code == exit_code::ok);
    const fs::path a = tmp / "a", b = tmp / "b";
    REQUIRE(cli({"train", "--config", config.string(), "--dataset", data.string(), "--out", a.string()}).code ==
            exit_code::ok);
    REQUIRE(cli({"train", "--config", config.string(), "--dataset", data.string(), "--out", b.string()}).code ==
            exit_code::ok);
    for (const char* f : {"train_log.jsonl", "model.json", "checkpoints/checkpoint.json", "lambda.json"}) {
        CAPTURE(f);
        CHECK(read_file(a / f) == read_file(b / f));
    }
    const TrainLog log = TrainLog::from_jsonl(read_file(a / "train_log.jsonl"));
    CHECK(log.entries.size() == 6);  // 0, 5, 10, 15, 20 and the last iteration
    REQUIRE(cli({"export-plots", "--run", a.string()}).code == exit_code::ok);
    const Table t = read_table(a / "plots" / "lambda_convergence.csv");
    CHECK(t.rows.size() == log.entries.size());
    CHECK(t.has("lambda_im1"));

    CHECK(cli({"export-plots", "--run", (tmp / "nowhere").string()}).code == exit_code::io);
}
