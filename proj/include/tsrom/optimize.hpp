#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrom/dataset.hpp"
#include "tsrom/model.hpp"
#include "tsrom/objectives.hpp"

namespace tsrom {

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    std::vector<Tensor> first;   // one per parameter block
    std::vector<Tensor> second;
};

// One bias-corrected Adam update of every block. Throws NumericError naming the
// first block whose gradient is not finite; parameters are left untouched then.
void adam_step(std::span<const ParamBlock> params, std::span<const Tensor> grads, AdamState& state);

// Uniformly picks a series among those at least `window_len` long, then a start offset.
std::vector<WindowRef> sample_windows(const Dataset& data, std::size_t window_len, std::size_t batch_size,
                                      std::mt19937_64& rng);
Batch minibatch(const Dataset& data, std::size_t window_len, std::size_t batch_size, std::mt19937_64& rng);

struct TrainConfig {
    std::size_t iterations = 5000;
    AdamHyper adam;
    std::size_t batch_size = 0;  // 0: every series as one window, every iteration
    std::size_t window = 0;      // window length when batch_size > 0
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 1000;
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
    std::size_t elbo_samples = 1;
    double prior_precision = 0.0;
    std::uint64_t seed = 0;
    std::string config_digest;
};

struct TrainLogEntry {
    std::size_t iteration = 0;
    double total = 0.0;
    std::map<std::string, double> parts;
    std::vector<double> lambda;  // effective spectrum, interleaved (re, im)
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<TrainLogEntry> entries;

    // One JSON object per line: a header record, then one record per entry.
    // Wall-clock stamps are left out unless requested so that reruns are byte-identical.
    std::string to_jsonl(bool include_wall_clock = false) const;
    static TrainLog from_jsonl(std::string_view text);
};

struct TrainCheckpoint {
    std::size_t iteration = 0;  // iterations completed
    Model model;
    AdamState adam;
    std::string minibatch_rng;
    std::string dropout_rng;
    std::string noise_rng;
    std::string config_digest;

    nlohmann::json to_json() const;
    static TrainCheckpoint from_json(const nlohmann::json& j);
};

struct TrainResult {
    Model model;
    TrainLog log;
    TrainCheckpoint final_state;
};

using TrainLogSink = std::function<void(const TrainLogEntry&)>;

// Joint Adam optimisation of encoder, decoder and spectrum. Deterministic models
// minimise deterministic_loss; probabilistic ones minimise the negated ELBO plus the
// MAP prior term. Throws DivergenceError on a non-finite loss or gradient; the last
// checkpoint on disk is left in place.
TrainResult train(const Dataset& data, const Model& initial, const TrainConfig& config,
                  const TrainCheckpoint* resume = nullptr, const TrainLogSink& sink = {});

void save_checkpoint(const TrainCheckpoint& ckpt, const std::filesystem::path& path);
TrainCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tsrom
