#pragma once

// Prediction from trained models: encode the anchor, jump the latent state to
// each query time, decode. Also phase-space clouds, error metrics and the
// delimited tables the CLI reads and writes.

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsrom/latent.hpp"
#include "tsrom/model.hpp"
#include "tsrom/tensor.hpp"

namespace tsrom {

struct Rollout {
    std::vector<double> times;
    Tensor mean;             // T x f: predictions (deterministic) or predictive mean
    Tensor variance;         // T x f, probabilistic only
    Tensor latent_mean;      // T x 2c interleaved
    Tensor latent_variance;  // T x c complex variances, probabilistic only
    bool probabilistic = false;

    std::size_t size() const noexcept { return times.size(); }
};

// Query times must be strictly increasing and not earlier than the anchor.
Rollout rollout_deterministic(const Model& model, std::span<const double> x_anchor, double anchor_time,
                              std::span<const double> query_times);

// Latent posterior from the variational encoder, moved by the OU transition;
// state-space moments from n_samples decoded draws plus decoder noise.
// `ou`, if given, must be the SFA-tied parameters of the model spectrum.
Rollout rollout_probabilistic(const Model& model, std::span<const double> x_anchor, double anchor_time,
                              std::span<const double> query_times, std::size_t n_samples, std::mt19937_64& rng,
                              const OUParams* ou = nullptr);

struct PhaseCloud {
    std::vector<double> u;
    std::vector<double> dudt;

    std::size_t size() const noexcept { return u.size(); }
};

// Central differences at interior times, pooled over channels. Times must be uniform.
PhaseCloud phase_cloud(std::span<const double> times, const Tensor& states);

struct PhaseGrid {
    double u_min = 0.0, u_max = 1.0;
    double d_min = 0.0, d_max = 1.0;
    std::size_t u_bins = 20, d_bins = 20;

    static PhaseGrid bounding(const PhaseCloud& cloud, std::size_t u_bins, std::size_t d_bins);
};

// 1 - (1/2) sum |h_a - h_b| over normalised histograms. Points outside the box
// share one overflow bin.
double phase_overlap(const PhaseCloud& a, const PhaseCloud& b, const PhaseGrid& grid);

struct MetricsReport {
    std::vector<double> times;
    std::vector<double> relative_error;  // |pred - ref| / |ref| per time
    double mean_relative_error = 0.0;
    std::optional<double> coverage;      // fraction of ref values within mean +- 2 sd

    nlohmann::json to_json() const;
};

MetricsReport metrics(const Rollout& pred, std::span<const double> ref_times, const Tensor& ref_states);

// Plain comma-separated table with a header row.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t index(const std::string& column) const;  // IoError naming a missing column
    std::vector<double> column(const std::string& name) const;
    bool has(const std::string& column) const;
};

std::string format_table(const Table& table);
Table parse_table(std::string_view text);
void write_table(const Table& table, const std::filesystem::path& path);
Table read_table(const std::filesystem::path& path);

// time, x0..x{f-1} [, var0.., zre0, zim0.., zvar0..]
Table rollout_table(const Rollout& r);
// Rebuilds a rollout (or a reference trajectory) from its table.
Rollout rollout_from_table(const Table& table);
Table phase_table(const PhaseCloud& cloud);

}  // namespace tsrom
