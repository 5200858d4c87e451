#include "tsrom/networks.hpp"

#include <cmath>

#include "tsrom/errors.hpp"

namespace tsrom {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
    }
}

std::vector<DenseLayer> init_layers(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        DenseLayer layer{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
        for (std::size_t i = 0; i < layer.weight.size(); ++i) layer.weight[i] = u(rng);
        layers.push_back(std::move(layer));
    }
    return layers;
}

Tensor run_rows(const Tensor& x, const std::vector<DenseLayer>& layers, ArchitectureKind kind) {
    Tape tape;
    const auto vars = bind_layers(tape, layers, false);
    const Var out = mlp_forward(tape.constant(x), vars, kind, 0.0, ForwardOptions{});
    return out.value();
}

Tensor as_row(std::span<const double> x) { return Tensor(std::vector<std::size_t>{1, x.size()}, {x.begin(), x.end()}); }

}  // namespace

std::string to_string(ArchitectureKind kind) { return kind == ArchitectureKind::linear ? "linear" : "mlp4"; }

ArchitectureKind architecture_from_string(const std::string& name) {
    if (name == "linear") return ArchitectureKind::linear;
    if (name == "mlp4") return ArchitectureKind::mlp4;
    throw ParameterError("unknown architecture '" + name + "' (expected linear or mlp4)");
}

void ArchitectureSpec::validate() const {
    if (input_dim == 0 || latent_dim == 0) throw ParameterError("architecture: dimensions must be positive");
    if (latent_dim > input_dim) {
        throw ParameterError("architecture: latent_dim " + std::to_string(latent_dim) + " exceeds input_dim " +
                             std::to_string(input_dim));
    }
    if (kind == ArchitectureKind::mlp4) {
        if (hidden.size() != 3) throw ParameterError("architecture: mlp4 needs exactly three hidden widths");
        for (auto w : hidden) {
            if (w == 0) throw ParameterError("architecture: hidden widths must be positive");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("architecture: dropout must lie in [0, 1)");
    }
}

std::vector<std::size_t> encoder_widths(const ArchitectureSpec& spec, bool variational) {
    const std::size_t out = (variational ? 3 : 2) * spec.latent_dim;
    if (spec.kind == ArchitectureKind::linear) return {spec.input_dim, out};
    return {spec.input_dim, spec.hidden[0], spec.hidden[1], spec.hidden[2], out};
}

std::vector<std::size_t> decoder_widths(const ArchitectureSpec& spec) {
    const std::size_t in = 2 * spec.latent_dim;
    if (spec.kind == ArchitectureKind::linear) return {in, spec.input_dim};
    return {in, spec.hidden[2], spec.hidden[1], spec.hidden[0], spec.input_dim};
}

EncoderParams init_encoder(const ArchitectureSpec& spec, bool variational, std::uint64_t seed) {
    spec.validate();
    return EncoderParams{spec, variational, init_layers(encoder_widths(spec, variational), seed)};
}

DecoderParams init_decoder(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    DecoderParams d;
    d.spec = spec;
    d.layers = init_layers(decoder_widths(spec), seed);
    return d;
}

std::vector<LayerVars> bind_layers(Tape& tape, const std::vector<DenseLayer>& layers, bool trainable) {
    std::vector<LayerVars> out;
    out.reserve(layers.size());
    for (const auto& l : layers) {
        if (trainable) {
            out.push_back({tape.variable(l.weight), tape.variable(l.bias)});
        } else {
            out.push_back({tape.constant(l.weight), tape.constant(l.bias)});
        }
    }
    return out;
}

Var mlp_forward(Var x, std::span<const LayerVars> layers, ArchitectureKind kind, double dropout_rate,
                const ForwardOptions& options) {
    const std::size_t expected = kind == ArchitectureKind::linear ? 1 : 4;
    if (layers.size() != expected) {
        throw DimensionError("network has " + std::to_string(layers.size()) + " layers, " + to_string(kind) +
                             " needs " + std::to_string(expected));
    }
    Var h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = add_row(matmul(h, layers[l].weight), layers[l].bias);
        if (l + 1 < layers.size()) {
            h = relu(h);
            if (options.training && dropout_rate > 0.0) {
                if (!options.rng) throw ParameterError("dropout in training mode needs a generator");
                h = dropout(h, dropout_rate, *options.rng, true);
            }
        }
    }
    return h;
}

Tensor encode_rows(const Tensor& x, const EncoderParams& params) {
    if (x.cols() != params.spec.input_dim) {
        throw DimensionError("encode: state has " + std::to_string(x.cols()) + " channels, expected " +
                             std::to_string(params.spec.input_dim));
    }
    require_finite(x.values(), "encode");
    return run_rows(x, params.layers, params.spec.kind);
}

Tensor decode_rows(const Tensor& z, const DecoderParams& params) {
    if (z.cols() != 2 * params.spec.latent_dim) {
        throw DimensionError("decode: latent has " + std::to_string(z.cols()) + " real channels, expected " +
                             std::to_string(2 * params.spec.latent_dim));
    }
    require_finite(z.values(), "decode");
    return run_rows(z, params.layers, params.spec.kind);
}

LatentState encode(std::span<const double> x, const EncoderParams& params) {
    const Tensor out = encode_rows(as_row(x), params);
    return deinterleave(std::span<const double>(out.data(), 2 * params.spec.latent_dim));
}

VariationalLatent encode_variational(std::span<const double> x, const EncoderParams& params) {
    if (!params.variational) throw ParameterError("encode_variational: encoder has no variance head");
    const Tensor out = encode_rows(as_row(x), params);
    const std::size_t c = params.spec.latent_dim;
    VariationalLatent v;
    v.mean = deinterleave(std::span<const double>(out.data(), 2 * c));
    for (std::size_t i = 0; i < c; ++i) v.variance.push_back(std::exp(out[2 * c + i]));
    return v;
}

std::vector<double> decode(const LatentState& z, const DecoderParams& params) {
    const auto flat = interleave(z);
    return decode_rows(as_row(flat), params).storage();
}

std::vector<double> interleave(const LatentState& z) {
    std::vector<double> out;
    out.reserve(2 * z.size());
    for (const auto& v : z) {
        out.push_back(v.real());
        out.push_back(v.imag());
    }
    return out;
}

LatentState deinterleave(std::span<const double> values) {
    if (values.size() % 2 != 0) throw DimensionError("interleaved latent needs an even length");
    LatentState z;
    for (std::size_t i = 0; i < values.size(); i += 2) z.emplace_back(values[i], values[i + 1]);
    return z;
}

}  // namespace tsrom
