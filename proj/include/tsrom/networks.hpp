#pragma once

// Encoder and decoder maps between observed states x in R^f and latent states
// z in C^c. Latent vectors are carried as 2c interleaved real channels.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tsrom/latent.hpp"
#include "tsrom/tensor.hpp"

namespace tsrom {

enum class ArchitectureKind { linear, mlp4 };

std::string to_string(ArchitectureKind kind);
ArchitectureKind architecture_from_string(const std::string& name);

struct ArchitectureSpec {
    std::size_t input_dim = 0;   // f
    std::size_t latent_dim = 0;  // c (complex components)
    ArchitectureKind kind = ArchitectureKind::linear;
    std::vector<std::size_t> hidden{64, 32, 16};  // encoder order; the decoder mirrors it
    double dropout = 0.1;

    // Throws ParameterError. Requires 0 < c <= f.
    void validate() const;
};

struct DenseLayer {
    Tensor weight;  // fan_in x fan_out
    Tensor bias;    // 1 x fan_out
};

struct EncoderParams {
    ArchitectureSpec spec;
    bool variational = false;  // head emits [2c interleaved means | c log-variances]
    std::vector<DenseLayer> layers;

    std::size_t output_dim() const { return variational ? 3 * spec.latent_dim : 2 * spec.latent_dim; }
};

struct DecoderParams {
    ArchitectureSpec spec;
    std::vector<DenseLayer> layers;
    // Log of the isotropic observation-noise variance; only used by the probabilistic model.
    Tensor log_noise_var = Tensor::scalar(0.0);
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
EncoderParams init_encoder(const ArchitectureSpec& spec, bool variational, std::uint64_t seed);
DecoderParams init_decoder(const ArchitectureSpec& spec, std::uint64_t seed);

// Layer widths for each side, input first.
std::vector<std::size_t> encoder_widths(const ArchitectureSpec& spec, bool variational);
std::vector<std::size_t> decoder_widths(const ArchitectureSpec& spec);

// ---------------------------------------------------------------------------
// Tape forward passes.

struct LayerVars {
    Var weight;
    Var bias;
};

struct ForwardOptions {
    bool training = false;            // enables dropout
    std::mt19937_64* rng = nullptr;   // required when training with dropout > 0
};

// Linear kind: one affine layer. mlp4: FC-ReLU-dropout x3 then a linear FC layer.
Var mlp_forward(Var x, std::span<const LayerVars> layers, ArchitectureKind kind, double dropout,
                const ForwardOptions& options);

std::vector<LayerVars> bind_layers(Tape& tape, const std::vector<DenseLayer>& layers, bool trainable);

// ---------------------------------------------------------------------------
// Value-level maps for inference.

LatentState encode(std::span<const double> x, const EncoderParams& params);

struct VariationalLatent {
    LatentState mean;
    std::vector<double> variance;  // complex variance per component, > 0
};
VariationalLatent encode_variational(std::span<const double> x, const EncoderParams& params);

// Returns the decoder mean.
std::vector<double> decode(const LatentState& z, const DecoderParams& params);

// Batched variants; rows are samples.
Tensor encode_rows(const Tensor& x, const EncoderParams& params);
Tensor decode_rows(const Tensor& z, const DecoderParams& params);

// Helpers between LatentState and interleaved rows.
std::vector<double> interleave(const LatentState& z);
LatentState deinterleave(std::span<const double> values);

}  // namespace tsrom
