#include "tsrom/optimize.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/rng.hpp"

namespace tsrom {

namespace {

constexpr const char* kCheckpointFormat = "tsrom-checkpoint";

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
    std::istringstream in(state);
    in >> rng;
    if (!in) throw IoError("checkpoint holds an unreadable generator state");
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void adam_step(std::span<const ParamBlock> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
    if (state.first.empty()) {
        for (const auto& p : params) {
            state.first.emplace_back(p.value->shape(), std::vector<double>(p.value->size(), 0.0));
            state.second.emplace_back(p.value->shape(), std::vector<double>(p.value->size(), 0.0));
        }
    }
    if (state.first.size() != params.size()) throw DimensionError("adam_step: optimiser state does not match parameters");
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (!grads[b].same_extents(*params[b].value) || !state.first[b].same_extents(*params[b].value)) {
            throw DimensionError("adam_step: shape mismatch in block " + params[b].name);
        }
        if (!grads[b].all_finite()) {
            throw NumericError("non-finite gradient in parameter block '" + params[b].name + "' at step " +
                               std::to_string(state.step + 1));
        }
    }

    const AdamHyper& h = state.hyper;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        Tensor& p = *params[b].value;
        Tensor& m = state.first[b];
        Tensor& v = state.second[b];
        const Tensor& g = grads[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            p[i] -= h.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.epsilon);
        }
    }
}

std::vector<WindowRef> sample_windows(const Dataset& data, std::size_t window_len, std::size_t batch_size,
                                      std::mt19937_64& rng) {
    if (window_len < 1) throw ParameterError("minibatch: window length must be positive");
    if (batch_size < 1) throw ParameterError("minibatch: batch size must be positive");
    std::vector<std::size_t> eligible;
    for (std::size_t k = 0; k < data.series.size(); ++k) {
        if (data.series[k].size() >= window_len) eligible.push_back(k);
    }
    if (eligible.empty()) {
        throw ParameterError("minibatch: window length " + std::to_string(window_len) + " exceeds every series");
    }
    std::uniform_int_distribution<std::size_t> pick_series(0, eligible.size() - 1);
    std::vector<WindowRef> windows;
    windows.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const std::size_t k = eligible[pick_series(rng)];
        std::uniform_int_distribution<std::size_t> pick_offset(0, data.series[k].size() - window_len);
        windows.push_back({k, pick_offset(rng), window_len});
    }
    return windows;
}

Batch minibatch(const Dataset& data, std::size_t window_len, std::size_t batch_size, std::mt19937_64& rng) {
    return make_batch(data, sample_windows(data, window_len, batch_size, rng));
}

std::string TrainLog::to_jsonl(bool include_wall_clock) const {
    std::string out;
    nlohmann::json header = {{"record", "header"}, {"seed", seed}, {"config_digest", config_digest}};
    out += header.dump() + "\n";
    for (const auto& e : entries) {
        nlohmann::json j = {{"record", "iteration"}, {"iteration", e.iteration}, {"loss", e.total},
                            {"parts", e.parts}, {"lambda", e.lambda}};
        if (include_wall_clock) j["wall_seconds"] = e.wall_seconds;
        out += j.dump() + "\n";
    }
    return out;
}

TrainLog TrainLog::from_jsonl(std::string_view text) {
    TrainLog log;
    std::istringstream in{std::string(text)};
    std::string line;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (j.at("record") == "header") {
                log.seed = j.at("seed").get<std::uint64_t>();
                log.config_digest = j.at("config_digest").get<std::string>();
            } else {
                TrainLogEntry e;
                e.iteration = j.at("iteration").get<std::size_t>();
                e.total = j.at("loss").get<double>();
                e.parts = j.at("parts").get<std::map<std::string, double>>();
                e.lambda = j.at("lambda").get<std::vector<double>>();
                e.wall_seconds = j.value("wall_seconds", 0.0);
                log.entries.push_back(std::move(e));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("training log is malformed: ") + e.what());
    }
    return log;
}

nlohmann::json TrainCheckpoint::to_json() const {
    nlohmann::json first = nlohmann::json::array(), second = nlohmann::json::array();
    for (const auto& t : adam.first) first.push_back(tensor_to_json(t));
    for (const auto& t : adam.second) second.push_back(tensor_to_json(t));
    return {{"format", kCheckpointFormat},
            {"version", 1},
            {"iteration", iteration},
            {"config_digest", config_digest},
            {"model", model_to_json(model)},
            {"adam",
             {{"learning_rate", adam.hyper.learning_rate},
              {"beta1", adam.hyper.beta1},
              {"beta2", adam.hyper.beta2},
              {"epsilon", adam.hyper.epsilon},
              {"step", adam.step},
              {"first", first},
              {"second", second}}},
            {"rng", {{"minibatch", minibatch_rng}, {"dropout", dropout_rng}, {"noise", noise_rng}}}};
}

TrainCheckpoint TrainCheckpoint::from_json(const nlohmann::json& j) {
    TrainCheckpoint c;
    try {
        if (j.at("format") != kCheckpointFormat) throw IoError("not a training checkpoint");
        c.iteration = j.at("iteration").get<std::size_t>();
        c.config_digest = j.at("config_digest").get<std::string>();
        c.model = model_from_json(j.at("model"));
        const auto& a = j.at("adam");
        c.adam.hyper = {a.at("learning_rate").get<double>(), a.at("beta1").get<double>(),
                        a.at("beta2").get<double>(), a.at("epsilon").get<double>()};
        c.adam.step = a.at("step").get<std::uint64_t>();
        for (const auto& t : a.at("first")) c.adam.first.push_back(tensor_from_json(t));
        for (const auto& t : a.at("second")) c.adam.second.push_back(tensor_from_json(t));
        const auto& r = j.at("rng");
        c.minibatch_rng = r.at("minibatch").get<std::string>();
        c.dropout_rng = r.at("dropout").get<std::string>();
        c.noise_rng = r.at("noise").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint is malformed: ") + e.what());
    }
    return c;
}

void save_checkpoint(const TrainCheckpoint& ckpt, const std::filesystem::path& path) {
    write_file_atomic(path, ckpt.to_json().dump() + "\n");
}

TrainCheckpoint load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return TrainCheckpoint::from_json(j);
}

TrainResult train(const Dataset& data, const Model& initial, const TrainConfig& config,
                  const TrainCheckpoint* resume, const TrainLogSink& sink) {
    data.validate();
    if (data.state_dim != initial.state_dim()) {
        throw DimensionError("train: dataset has " + std::to_string(data.state_dim) + " channels, model expects " +
                             std::to_string(initial.state_dim()));
    }
    if (!(config.adam.learning_rate > 0.0)) throw ParameterError("train: learning rate must be positive");
    if (config.batch_size > 0 && config.window < 1) throw ParameterError("train: minibatches need a window length");
    if (config.elbo_samples < 1) throw ParameterError("train: elbo_samples must be at least 1");
    if (config.prior_precision < 0.0) throw ParameterError("train: prior precision must be non-negative");

    Model model = initial;
    AdamState adam;
    adam.hyper = config.adam;
    std::mt19937_64 batch_rng(derive_seed(config.seed, streams::minibatch));
    std::mt19937_64 dropout_rng(derive_seed(config.seed, streams::dropout));
    std::mt19937_64 noise_rng(derive_seed(config.seed, streams::elbo_noise));
    std::size_t start = 0;
    if (resume) {
        if (!resume->config_digest.empty() && resume->config_digest != config.config_digest) {
            throw DigestMismatchError("checkpoint was written under a different configuration");
        }
        model = resume->model;
        adam = resume->adam;
        adam.hyper = config.adam;
        restore_rng(batch_rng, resume->minibatch_rng);
        restore_rng(dropout_rng, resume->dropout_rng);
        restore_rng(noise_rng, resume->noise_rng);
        start = resume->iteration;
    }

    const bool full = config.batch_size == 0;
    const Batch whole = full ? full_batch(data) : Batch{};
    const bool probabilistic = model.variant == Variant::probabilistic;
    const ElboOptions elbo_options{config.elbo_samples, config.prior_precision};

    TrainResult result;
    result.log.seed = config.seed;
    result.log.config_digest = config.config_digest;

    auto snapshot = [&](std::size_t done) {
        TrainCheckpoint c;
        c.iteration = done;
        c.model = model;
        c.adam = adam;
        c.minibatch_rng = rng_state(batch_rng);
        c.dropout_rng = rng_state(dropout_rng);
        c.noise_rng = rng_state(noise_rng);
        c.config_digest = config.config_digest;
        return c;
    };

    const auto clock_start = std::chrono::steady_clock::now();
    for (std::size_t it = start; it < config.iterations; ++it) {
        const Batch sampled = full ? Batch{} : minibatch(data, config.window, config.batch_size, batch_rng);
        const Batch& batch = full ? whole : sampled;

        Tape tape;
        const BoundModel bound = bind_model(tape, model, true);
        const ForwardOptions forward{true, &dropout_rng};
        const LossGraph loss = probabilistic
                                   ? elbo_loss(tape, bound, model, batch, noise_rng, elbo_options, forward)
                                   : deterministic_loss(tape, bound, model, batch, forward);
        const double total = loss.report.total;
        if (!std::isfinite(total)) {
            throw DivergenceError("non-finite loss at iteration " + std::to_string(it));
        }

        if (config.log_every > 0 && (it % config.log_every == 0 || it + 1 == config.iterations)) {
            TrainLogEntry e;
            e.iteration = it;
            e.total = total;
            e.parts = loss.report.parts;
            e.lambda = model.spectrum().interleaved();
            e.wall_seconds = seconds_since(clock_start);
            if (sink) sink(e);
            result.log.entries.push_back(std::move(e));
        }

        tape.backward(loss.total);
        auto blocks = parameter_blocks(model);
        std::vector<Tensor> grads;
        grads.reserve(bound.leaves.size());
        for (const Var& leaf : bound.leaves) grads.push_back(tape.gradient(leaf));
        try {
            adam_step(blocks, grads, adam);
        } catch (const NumericError& e) {
            throw DivergenceError(std::string(e.what()) + " (iteration " + std::to_string(it) + ")");
        }

        const std::size_t done = it + 1;
        if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
            std::filesystem::create_directories(config.checkpoint_dir);
            save_checkpoint(snapshot(done), config.checkpoint_dir / "checkpoint.json");
        }
    }

    result.final_state = snapshot(std::max(start, config.iterations));
    result.model = std::move(model);
    return result;
}

}  // namespace tsrom
