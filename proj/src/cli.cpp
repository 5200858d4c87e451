#include "tsrom/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsrom/config.hpp"
#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/rng.hpp"
#include "tsrom/rollout.hpp"

#ifndef TSROM_VERSION
#define TSROM_VERSION "unknown"
#endif

namespace tsrom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Inventory of one command's inputs and outputs, written last.
class RunManifest {
public:
    RunManifest(std::string command, fs::path dir) : command_(std::move(command)), dir_(std::move(dir)) {
        start_ = std::chrono::steady_clock::now();
        started_at_ = std::time(nullptr);
    }

    json& extra() { return extra_; }
    void input(const std::string& name, const std::string& digest) { inputs_[name] = digest; }
    void output(const fs::path& file) { outputs_.push_back(file); }

    void write() const {
        json files = json::array();
        for (const auto& f : outputs_) {
            files.push_back({{"path", fs::relative(f, dir_).generic_string()}, {"sha256", sha256_hex(read_file(f))}});
        }
        char stamp[32];
        std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&started_at_));
        json j = extra_;
        j["command"] = command_;
        j["library_version"] = TSROM_VERSION;
        j["inputs"] = inputs_;
        j["outputs"] = files;
        j["wall_clock"] = {{"started_at", stamp},
                           {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
        write_file_atomic(dir_ / "run_manifest.json", j.dump(2) + "\n");
    }

private:
    std::string command_;
    fs::path dir_;
    json extra_ = json::object();
    json inputs_ = json::object();
    std::vector<fs::path> outputs_;
    std::chrono::steady_clock::time_point start_;
    std::time_t started_at_;
};

fs::path resolve_out(const std::string& out, const std::string& verb, const std::string& name) {
    if (!out.empty()) return out;
    const char* root = std::getenv("TSROM_RUN_ROOT");
    return fs::path(root && *root ? root : "runs") / (verb + "-" + name);
}

std::vector<double> parse_times(const std::string& spec) {
    std::vector<double> out;
    auto number = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ParameterError("--times: '" + s + "' is not a number");
        }
    };
    if (spec.find(':') != std::string::npos) {
        // start:step:stop, inclusive
        std::vector<double> parts;
        std::istringstream in(spec);
        std::string piece;
        while (std::getline(in, piece, ':')) parts.push_back(number(piece));
        if (parts.size() != 3 || !(parts[1] > 0.0) || parts[2] < parts[0]) {
            throw ParameterError("--times: expected start:step:stop with a positive step");
        }
        const auto n = static_cast<std::size_t>(std::llround((parts[2] - parts[0]) / parts[1]));
        for (std::size_t i = 0; i <= n; ++i) out.push_back(parts[0] + static_cast<double>(i) * parts[1]);
        return out;
    }
    std::istringstream in(spec);
    std::string piece;
    while (std::getline(in, piece, ',')) out.push_back(number(piece));
    if (out.empty()) throw ParameterError("--times: empty list");
    return out;
}

json lambda_json(const SpectrumParams& s) {
    json out = json::array();
    for (const auto& l : s.lambda) out.push_back({l.real(), l.imag()});
    return out;
}

// Ground truth continuation of the generating system from a dataset anchor.
Tensor reference_states(const RunConfig& config, const Dataset& data, std::span<const double> anchor,
                        double anchor_time, const std::vector<double>& times) {
    Tensor ref(times.size(), anchor.size());
    auto put = [&](std::size_t row, const std::vector<double>& x) {
        for (std::size_t k = 0; k < x.size(); ++k) ref(row, k) = x[k];
    };
    switch (config.experiment) {
        case Experiment::linear_ode:
            for (std::size_t i = 0; i < times.size(); ++i) {
                put(i, linear_flow(config.linear_ode.system, anchor, times[i] - anchor_time));
            }
            break;
        case Experiment::multiscale: {
            if (!data.metadata.contains("mixing")) throw IoError("dataset metadata lacks the mixing matrix");
            const Tensor w = tensor_from_json(data.metadata["mixing"]);
            for (std::size_t i = 0; i < times.size(); ++i) put(i, multiscale_state(config.multiscale, w, times[i]));
            break;
        }
        case Experiment::ks: {
            KsConfig ks = config.ks;
            const double dt = ks.output_dt();
            std::vector<std::size_t> index;
            for (double t : times) {
                const double k = (t - anchor_time) / dt;
                if (std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, k)) {
                    throw ParameterError("ks reference: query times must lie on the output grid of the solver");
                }
                index.push_back(static_cast<std::size_t>(std::llround(k)));
            }
            ks.initial.assign(anchor.begin(), anchor.end());
            ks.perturbation = 0.0;
            ks.n_outputs = index.back() + 1;
            const Trajectory traj = etdrk4_ks(ks);
            for (std::size_t i = 0; i < times.size(); ++i) {
                for (std::size_t k = 0; k < anchor.size(); ++k) ref(i, k) = traj.states(index[i], k);
            }
            break;
        }
    }
    return ref;
}

Table reference_table(const std::vector<double>& times, const Tensor& states) {
    Rollout r;
    r.times = times;
    r.mean = states;
    return rollout_table(r);
}

// --------------------------------------------------------------------------

struct Options {
    std::string config, dataset, model, out, pred, ref, run, anchor, times, mode = "auto";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> log_every;
    double anchor_time = 0.0;
    std::size_t samples = 256;
    bool resume = false;
};

int cmd_generate(const Options& o, std::ostream& out) {
    RunConfig config = load_run_config(o.config);
    if (o.seed) config.seed = *o.seed;
    const fs::path dir = resolve_out(o.out, "generate", fs::path(o.config).stem().string());
    RunManifest manifest("generate", dir);
    manifest.input("config", sha256_hex(read_file(o.config)));
    const Dataset d = generate_dataset(config);
    write_dataset(d, dir);
    for (const char* f : {"series.bin", "series.txt", "manifest.json"}) manifest.output(dir / f);
    manifest.extra()["config_digest"] = config.data_digest();
    manifest.extra()["seeds"] = {{"master", config.seed}, {"datagen", derive_seed(config.seed, streams::datagen)}};
    manifest.write();
    out << "wrote " << d.series.size() << " series (" << d.total_points() << " points) to " << dir.string() << "\n";
    return exit_code::ok;
}

int cmd_train(const Options& o, std::ostream& out) {
    RunConfig config = load_run_config(o.config);
    if (o.seed) config.seed = *o.seed;
    if (o.log_every) config.train.log_every = *o.log_every;
    config.train.seed = config.seed;
    config.train.config_digest = config.digest();

    const Dataset data = read_dataset(o.dataset);
    const std::string expected = config.data_digest();
    if (data.metadata.value("config_digest", "") != expected) {
        throw DigestMismatchError("dataset " + o.dataset + " was not generated from the [data] settings of " +
                                  o.config + " (digest " + data.metadata.value("config_digest", "none") +
                                  ", expected " + expected + ")");
    }

    const fs::path dir = resolve_out(o.out, "train", fs::path(o.config).stem().string());
    fs::create_directories(dir);
    RunManifest manifest("train", dir);
    manifest.input("config", sha256_hex(read_file(o.config)));
    manifest.input("dataset", json::parse(read_file(fs::path(o.dataset) / "manifest.json")).value("data_sha256", ""));
    config.train.checkpoint_dir = dir / "checkpoints";
    const fs::path ckpt_path = config.train.checkpoint_dir / "checkpoint.json";
    const fs::path log_path = dir / "train_log.jsonl";
    const fs::path partial_path = dir / "train_log.partial.jsonl";

    std::optional<TrainCheckpoint> resume;
    TrainLog earlier;
    if (o.resume) {
        resume = load_checkpoint(ckpt_path);
        for (const fs::path& p : {partial_path, log_path}) {
            if (!fs::exists(p)) continue;
            for (auto& e : TrainLog::from_jsonl(read_file(p)).entries) {
                if (e.iteration < resume->iteration) earlier.entries.push_back(std::move(e));
            }
            break;
        }
    }

    const Model initial = init_model(config.architecture, config.variant, config.seed);
    {
        // the partial log mirrors progress so an aborted run leaves its history behind
        TrainLog head;
        head.seed = config.seed;
        head.config_digest = config.train.config_digest;
        head.entries = earlier.entries;
        write_file_atomic(partial_path, head.to_jsonl());
    }
    std::ofstream partial(partial_path, std::ios::app);
    const TrainResult result =
        train(data, initial, config.train, resume ? &*resume : nullptr, [&](const TrainLogEntry& e) {
            TrainLog one;
            one.entries.push_back(e);
            const std::string text = one.to_jsonl();
            partial << text.substr(text.find('\n') + 1) << std::flush;
        });
    partial.close();

    TrainLog log = result.log;
    log.entries.insert(log.entries.begin(), earlier.entries.begin(), earlier.entries.end());
    write_file_atomic(log_path, log.to_jsonl());
    fs::remove(partial_path);
    save_model(result.model, dir / "model.json");
    fs::create_directories(config.train.checkpoint_dir);
    save_checkpoint(result.final_state, ckpt_path);

    json report = {{"lambda", lambda_json(result.model.spectrum())}, {"iterations", config.train.iterations}};
    if (data.metadata.contains("true_lambda")) report["true_lambda"] = data.metadata["true_lambda"];
    write_file_atomic(dir / "lambda.json", report.dump(2) + "\n");
    write_file_atomic(dir / "config.json", config.to_json().dump(2) + "\n");

    for (const fs::path& p : {log_path, dir / "model.json", ckpt_path, dir / "lambda.json", dir / "config.json"}) {
        manifest.output(p);
    }
    manifest.extra()["config_digest"] = config.train.config_digest;
    manifest.extra()["seeds"] = {{"master", config.seed},
                                 {"minibatch", derive_seed(config.seed, streams::minibatch)},
                                 {"dropout", derive_seed(config.seed, streams::dropout)},
                                 {"elbo_noise", derive_seed(config.seed, streams::elbo_noise)}};
    manifest.write();

    out << "trained " << config.train.iterations << " iterations; lambda:";
    for (const auto& l : result.model.spectrum().lambda) out << " (" << l.real() << ", " << l.imag() << ")";
    out << "\n";
    return exit_code::ok;
}

int cmd_predict(const Options& o, std::ostream& out) {
    const Model model = load_model(o.model);
    const std::vector<double> times = parse_times(o.times);

    std::vector<double> anchor;
    double anchor_time = o.anchor_time;
    std::optional<Dataset> data;
    const auto colon = o.anchor.find(':');
    if (colon != std::string::npos && !fs::exists(o.anchor)) {
        if (o.dataset.empty()) throw ParameterError("--anchor S:R needs --dataset");
        data = read_dataset(o.dataset);
        std::size_t s = 0, r = 0;
        try {
            s = std::stoul(o.anchor.substr(0, colon));
            r = std::stoul(o.anchor.substr(colon + 1));
        } catch (const std::exception&) {
            throw ParameterError("--anchor: expected SERIES:ROW or a state file");
        }
        if (s >= data->series.size() || r >= data->series[s].size()) throw ParameterError("--anchor: out of range");
        const Series& ser = data->series[s];
        for (std::size_t k = 0; k < data->state_dim; ++k) anchor.push_back(ser.states(r, k));
        anchor_time = ser.times[r];
    } else {
        std::istringstream in(read_file(o.anchor));
        double v = 0.0;
        while (in >> v) anchor.push_back(v);
        if (!in.eof()) throw IoError("anchor file " + o.anchor + " holds a non-numeric value");
    }
    if (anchor.size() != model.state_dim()) {
        throw DimensionError("anchor has " + std::to_string(anchor.size()) + " values, model expects " +
                             std::to_string(model.state_dim()));
    }

    const fs::path dir = resolve_out(o.out, "predict", fs::path(o.model).parent_path().filename().string());
    fs::create_directories(dir);
    RunManifest manifest("predict", dir);
    manifest.input("model", sha256_hex(read_file(o.model)));

    Rollout r;
    const std::uint64_t seed = o.seed.value_or(0);
    if (model.variant == Variant::probabilistic) {
        std::mt19937_64 rng(derive_seed(seed, streams::rollout));
        r = rollout_probabilistic(model, anchor, anchor_time, times, o.samples, rng);
    } else {
        r = rollout_deterministic(model, anchor, anchor_time, times);
    }
    write_table(rollout_table(r), dir / "rollout.csv");
    manifest.output(dir / "rollout.csv");
    if (data && !o.config.empty()) {
        const RunConfig config = load_run_config(o.config);
        const Tensor ref = reference_states(config, *data, anchor, anchor_time, times);
        write_table(reference_table(times, ref), dir / "reference.csv");
        manifest.output(dir / "reference.csv");
    }
    manifest.extra()["anchor"] = {{"spec", o.anchor}, {"time", anchor_time}};
    manifest.extra()["seeds"] = {{"master", seed}, {"rollout", derive_seed(seed, streams::rollout)}};
    manifest.extra()["phase_space"] = "(u, du/dt) by central differences, pooled over channels";
    manifest.write();
    out << "wrote " << times.size() << " predicted states to " << (dir / "rollout.csv").string() << "\n";
    return exit_code::ok;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const Table pred_table = read_table(o.pred);
    const Table ref_table = read_table(o.ref);
    if (o.mode != "auto" && o.mode != "deterministic" && o.mode != "probabilistic") {
        throw ParameterError("--mode must be auto, deterministic or probabilistic");
    }
    if (o.mode == "probabilistic") pred_table.index("var0");
    Rollout pred = rollout_from_table(pred_table);
    if (o.mode == "deterministic") pred.probabilistic = false;
    const Rollout ref = rollout_from_table(ref_table);
    if (ref.mean.cols() != pred.mean.cols()) {
        throw IoError("reference table is missing column 'x" + std::to_string(ref.mean.cols()) + "'");
    }
    const MetricsReport report = metrics(pred, ref.times, ref.mean);
    const std::string text = report.to_json().dump(2) + "\n";
    const fs::path dir = resolve_out(o.out, "evaluate", fs::path(o.pred).parent_path().filename().string());
    fs::create_directories(dir);
    RunManifest manifest("evaluate", dir);
    manifest.input("pred", sha256_hex(read_file(o.pred)));
    manifest.input("ref", sha256_hex(read_file(o.ref)));
    write_file_atomic(dir / "metrics.json", text);
    manifest.output(dir / "metrics.json");
    manifest.write();
    out << text;
    return exit_code::ok;
}

int cmd_export_plots(const Options& o, std::ostream& out) {
    const fs::path run = o.run;
    if (!fs::is_directory(run)) throw IoError("run directory " + run.string() + " does not exist");
    if (!fs::exists(run / "train_log.jsonl") && !fs::exists(run / "rollout.csv")) {
        throw IoError("run directory " + run.string() + " has no train_log.jsonl or rollout.csv");
    }
    const fs::path dir = o.out.empty() ? run / "plots" : fs::path(o.out);
    fs::create_directories(dir);
    RunManifest manifest("export-plots", dir);
    std::size_t written = 0;
    auto emit = [&](const Table& t, const char* name) {
        write_table(t, dir / name);
        manifest.output(dir / name);
        ++written;
    };

    if (fs::exists(run / "train_log.jsonl")) {
        const TrainLog log = TrainLog::from_jsonl(read_file(run / "train_log.jsonl"));
        Table t;
        t.columns = {"iteration", "loss"};
        const std::size_t n = log.entries.empty() ? 0 : log.entries.front().lambda.size() / 2;
        for (std::size_t i = 0; i < n; ++i) {
            t.columns.push_back("lambda_re" + std::to_string(i));
            t.columns.push_back("lambda_im" + std::to_string(i));
        }
        for (const auto& e : log.entries) {
            std::vector<double> row{static_cast<double>(e.iteration), e.total};
            row.insert(row.end(), e.lambda.begin(), e.lambda.end());
            t.rows.push_back(std::move(row));
        }
        emit(t, "lambda_convergence.csv");
    }

    if (fs::exists(run / "rollout.csv")) {
        const Rollout pred = rollout_from_table(read_table(run / "rollout.csv"));
        std::optional<Rollout> ref;
        if (fs::exists(run / "reference.csv")) ref = rollout_from_table(read_table(run / "reference.csv"));
        const std::size_t f = pred.mean.cols();

        Table overlay;
        overlay.columns = {"time"};
        for (std::size_t k = 0; k < f; ++k) overlay.columns.push_back("pred" + std::to_string(k));
        if (ref) {
            for (std::size_t k = 0; k < f; ++k) overlay.columns.push_back("ref" + std::to_string(k));
        }
        for (std::size_t n = 0; n < pred.size(); ++n) {
            std::vector<double> row{pred.times[n]};
            for (std::size_t k = 0; k < f; ++k) row.push_back(pred.mean(n, k));
            if (ref) {
                for (std::size_t k = 0; k < f; ++k) row.push_back(ref->mean(n, k));
            }
            overlay.rows.push_back(std::move(row));
        }
        emit(overlay, "trajectory.csv");

        if (pred.probabilistic) {
            // one row per (time, channel): mean with a +-2 sd band
            Table band;
            band.columns = {"time", "channel", "mean", "lower", "upper"};
            if (ref) band.columns.push_back("reference");
            for (std::size_t n = 0; n < pred.size(); ++n) {
                for (std::size_t k = 0; k < f; ++k) {
                    const double sd = std::sqrt(pred.variance(n, k));
                    std::vector<double> row{pred.times[n], static_cast<double>(k), pred.mean(n, k),
                                            pred.mean(n, k) - 2.0 * sd, pred.mean(n, k) + 2.0 * sd};
                    if (ref) row.push_back(ref->mean(n, k));
                    band.rows.push_back(std::move(row));
                }
            }
            emit(band, "band.csv");
        }

        try {
            emit(phase_table(phase_cloud(pred.times, pred.mean)), "phase_pred.csv");
            if (ref) emit(phase_table(phase_cloud(ref->times, ref->mean)), "phase_ref.csv");
        } catch (const ParameterError& e) {
            out << "skipping phase clouds: " << e.what() << "\n";
        }
    }
    if (written == 0) throw IoError("run directory " + run.string() + " has no train_log.jsonl or rollout.csv");
    manifest.write();
    out << "wrote " << written << " tables to " << dir.string() << "\n";
    return exit_code::ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Interpretable reduced-order models with complex latent dynamics", "tsrom"};
    app.require_subcommand(1);
    app.set_version_flag("--version", TSROM_VERSION);
    Options o;

    auto* gen = app.add_subcommand("generate", "Generate a training dataset");
    gen->add_option("--config", o.config, "Run configuration")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", o.out, "Output directory");
    gen->add_option("--seed", o.seed, "Override the configured seed");

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--config", o.config, "Run configuration")->required()->check(CLI::ExistingFile);
    tr->add_option("--dataset", o.dataset, "Dataset directory")->required();
    tr->add_option("--out", o.out, "Output directory");
    tr->add_option("--seed", o.seed, "Override the configured seed");
    tr->add_option("--log-every", o.log_every, "Log cadence in iterations");
    tr->add_flag("--resume", o.resume, "Continue from the checkpoint in the output directory");

    auto* pr = app.add_subcommand("predict", "Roll a trained model forward from an anchor");
    pr->add_option("--model", o.model, "Trained model (model.json)")->required()->check(CLI::ExistingFile);
    pr->add_option("--anchor", o.anchor, "SERIES:ROW of --dataset, or a file of state values")->required();
    pr->add_option("--anchor-time", o.anchor_time, "Anchor time for a state file");
    pr->add_option("--times", o.times, "Query times: t1,t2,... or start:step:stop")->required();
    pr->add_option("--dataset", o.dataset, "Dataset directory");
    pr->add_option("--config", o.config, "Run configuration; adds a ground-truth reference table");
    pr->add_option("--samples", o.samples, "Decoded draws per time (probabilistic models)");
    pr->add_option("--out", o.out, "Output directory");
    pr->add_option("--seed", o.seed, "Seed for probabilistic draws");

    auto* ev = app.add_subcommand("evaluate", "Compare a rollout table with a reference table");
    ev->add_option("--pred", o.pred, "Rollout table")->required()->check(CLI::ExistingFile);
    ev->add_option("--ref", o.ref, "Reference table")->required()->check(CLI::ExistingFile);
    ev->add_option("--mode", o.mode, "auto, deterministic or probabilistic");
    ev->add_option("--out", o.out, "Output directory");

    auto* ex = app.add_subcommand("export-plots", "Write plot-ready tables for a run directory");
    ex->add_option("--run", o.run, "Run directory")->required();
    ex->add_option("--out", o.out, "Output directory (default: <run>/plots)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_code::ok : exit_code::usage;
    }

    try {
        if (gen->parsed()) return cmd_generate(o, out);
        if (tr->parsed()) return cmd_train(o, out);
        if (pr->parsed()) return cmd_predict(o, out);
        if (ev->parsed()) return cmd_evaluate(o, out);
        if (ex->parsed()) return cmd_export_plots(o, out);
    } catch (const DigestMismatchError& e) {
        err << "digest mismatch: " << e.what() << "\n";
        return exit_code::digest;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const ParameterError& e) {
        err << "invalid argument: " << e.what() << "\n";
        return exit_code::config;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return exit_code::io;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << "\n";
        return exit_code::io;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << "\n";
        return exit_code::dimension;
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << "\n";
        return exit_code::divergence;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return exit_code::divergence;
    } catch (const StationarityError& e) {
        err << "numeric error: " << e.what() << "\n";
        return exit_code::divergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    }
    return exit_code::usage;
}

}  // namespace tsrom
