#pragma once

// Training objectives.
//
// Deterministic: mean reconstruction error plus mean latent propagation error
// over the valid transition pairs of a batch.
//
// Probabilistic: the negated evidence lower bound of the OU-prior model, with
// a complex-normal amortised posterior per state and an isotropic Gaussian
// decoder likelihood. Sampled terms use the reparametrisation
// z = mu + sqrt(v/2) (eps_re + i eps_im).

#include <map>
#include <random>
#include <string>
#include <vector>

#include "tsrom/dataset.hpp"
#include "tsrom/latent.hpp"
#include "tsrom/model.hpp"
#include "tsrom/tensor.hpp"

namespace tsrom {

struct WindowRef {
    std::size_t series = 0;
    std::size_t offset = 0;
    std::size_t length = 0;
};

// Stacked windows. Transition pairs never cross a window boundary.
struct Batch {
    Tensor states;                        // N x f
    std::vector<std::size_t> window_starts;
    std::vector<std::size_t> from_rows;   // transition pair sources
    std::vector<std::size_t> to_rows;     // transition pair targets
    std::vector<double> gaps;             // dt per pair, > 0

    std::size_t size() const noexcept { return states.rows(); }
    std::size_t pairs() const noexcept { return gaps.size(); }
};

Batch make_batch(const Dataset& data, const std::vector<WindowRef>& windows);
// Every series as one window.
Batch full_batch(const Dataset& data);

struct LossReport {
    double total = 0.0;
    std::map<std::string, double> parts;
    // Set when the batch has no transition pairs and the propagation term is zero by definition.
    bool propagation_undefined = false;
    // Standard error of the Monte Carlo estimate of `total` (ELBO with n_samples > 1).
    double mc_std_error = 0.0;
};

// Taped objective: `total` is a 1 x 1 node ready for backward().
struct LossGraph {
    Var total;
    std::vector<std::pair<std::string, Var>> parts;
    LossReport report;
};

LossGraph deterministic_loss(Tape& tape, const BoundModel& bound, const Model& model, const Batch& batch,
                             const ForwardOptions& options);
LossReport deterministic_loss(const Batch& batch, const Model& model);

// z = mean + sqrt(var/2) (noise_re + i noise_im); noise holds 2 draws per component.
LatentState reparam_sample(const LatentState& mean, std::span<const double> var, std::span<const double> noise);

struct ElboOptions {
    std::size_t n_samples = 1;
    double prior_precision = 0.0;  // Gaussian prior on theta; 0 means improper uniform
};

LossGraph elbo_loss(Tape& tape, const BoundModel& bound, const Model& model, const Batch& batch,
                    std::mt19937_64& rng, const ElboOptions& options, const ForwardOptions& forward);

// Value-level negated ELBO. `ou` must be the SFA-tied parameters of model.spectrum();
// anything else throws ConfigError.
LossReport elbo(const Batch& batch, const Model& model, const OUParams& ou, std::mt19937_64& rng,
                std::size_t n_samples);

// log p(theta) for a zero-mean Gaussian prior with precision tau: -(tau/2) |theta|^2.
double map_regularizer(const Model& model, double precision = 0.0);

}  // namespace tsrom
