#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrom/tensor.hpp"

namespace tsrom {

// One recorded trajectory: strictly increasing times and one state row per time.
struct Series {
    std::vector<double> times;
    Tensor states;  // n x f

    std::size_t size() const noexcept { return times.size(); }
};

struct Dataset {
    std::size_t state_dim = 0;
    std::vector<Series> series;
    // Generator settings, seeds, ground truth and digests. Written to the manifest.
    nlohmann::json metadata = nlohmann::json::object();

    std::size_t total_points() const;
    // Throws ParameterError on non-increasing times, ragged rows or non-finite values.
    void validate() const;
};

// Binary series encoding (see docs/formats.md). Deterministic for a given dataset.
std::string encode_series_binary(const Dataset& d);
Dataset decode_series_binary(std::string_view bytes);

std::string encode_series_text(const Dataset& d);
Dataset decode_series_text(std::string_view text);

// Writes manifest.json, series.bin and series.txt into `dir`.
void write_dataset(const Dataset& d, const std::filesystem::path& dir);

// Reads the manifest and the binary records, verifying the recorded data digest.
// Throws IoError on missing or corrupted files.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace tsrom
