#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrom/latent.hpp"
#include "tsrom/networks.hpp"

namespace tsrom {

enum class Variant { deterministic, probabilistic };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

// Encoder, decoder and latent spectrum trained jointly.
//
// `spectrum_raw` holds 2c interleaved reals. The deterministic variant uses
// them as lambda directly; the probabilistic variant maps the real parts
// through softplus(.) + 1e-6 so that Re(lambda) > 0 always holds.
struct Model {
    Variant variant = Variant::deterministic;
    EncoderParams encoder;
    DecoderParams decoder;
    Tensor spectrum_raw;

    SpectrumParams spectrum() const;
    std::size_t latent_dim() const { return encoder.spec.latent_dim; }
    std::size_t state_dim() const { return encoder.spec.input_dim; }
    double noise_variance() const;
};

Model init_model(const ArchitectureSpec& spec, Variant variant, std::uint64_t seed);

// Named, mutable views on every trainable tensor, in a fixed order.
struct ParamBlock {
    std::string name;
    Tensor* value;
};
std::vector<ParamBlock> parameter_blocks(Model& model);
std::vector<std::string> parameter_names(const Model& model);

// Tape leaves for a model. `leaves` follows parameter_blocks() order.
struct BoundModel {
    std::vector<LayerVars> encoder;
    std::vector<LayerVars> decoder;
    Var spectrum_raw;
    Var spectrum;       // effective interleaved lambda
    Var log_noise_var;  // probabilistic only
    std::vector<Var> leaves;
};
BoundModel bind_model(Tape& tape, const Model& model, bool trainable);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace tsrom
