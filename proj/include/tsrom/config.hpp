#pragma once

// Run configuration: a sectioned key = value file.
//
//   [run]    experiment, variant, seed
//   [data]   generator settings for the chosen experiment
//   [model]  architecture, latent_dim, hidden, dropout
//   [train]  optimiser and loop settings
//
// Unknown sections or keys are rejected before any work starts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tsrom/datagen.hpp"
#include "tsrom/model.hpp"
#include "tsrom/networks.hpp"
#include "tsrom/optimize.hpp"

namespace tsrom {

enum class Experiment { linear_ode, multiscale, ks };

std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& name);

struct RunConfig {
    Experiment experiment = Experiment::linear_ode;
    Variant variant = Variant::deterministic;
    std::uint64_t seed = 1;
    LinearOdeConfig linear_ode;
    MultiscaleConfig multiscale;
    KsConfig ks;
    ArchitectureSpec architecture;  // input_dim follows the experiment
    TrainConfig train;              // seed and digest are filled in from the run

    // Settings of the active generator, as recorded in dataset manifests.
    nlohmann::json generator_json() const;
    std::string data_digest() const;
    // Everything that shapes a training run.
    nlohmann::json to_json() const;
    std::string digest() const;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

Dataset generate_dataset(const RunConfig& config);

}  // namespace tsrom
