#include "tsrom/model.hpp"

#include <cmath>

#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/rng.hpp"

namespace tsrom {

namespace {

constexpr const char* kModelFormat = "tsrom-model";
constexpr int kModelVersion = 1;

nlohmann::json spec_to_json(const ArchitectureSpec& s) {
    return {{"input_dim", s.input_dim},
            {"latent_dim", s.latent_dim},
            {"kind", to_string(s.kind)},
            {"hidden", s.hidden},
            {"dropout", s.dropout}};
}

ArchitectureSpec spec_from_json(const nlohmann::json& j) {
    ArchitectureSpec s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    s.kind = architecture_from_string(j.at("kind").get<std::string>());
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.dropout = j.at("dropout").get<double>();
    s.validate();
    return s;
}

nlohmann::json layers_to_json(const std::vector<DenseLayer>& layers) {
    auto arr = nlohmann::json::array();
    for (const auto& l : layers) arr.push_back({{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}});
    return arr;
}

std::vector<DenseLayer> layers_from_json(const nlohmann::json& j, const std::vector<std::size_t>& widths) {
    if (j.size() + 1 != widths.size()) throw IoError("model file: unexpected layer count");
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l < j.size(); ++l) {
        DenseLayer d{tensor_from_json(j[l].at("weight")), tensor_from_json(j[l].at("bias"))};
        if (d.weight.rows() != widths[l] || d.weight.cols() != widths[l + 1] || d.bias.rows() != 1 ||
            d.bias.cols() != widths[l + 1]) {
            throw IoError("model file: layer " + std::to_string(l) + " does not match the architecture");
        }
        layers.push_back(std::move(d));
    }
    return layers;
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::deterministic ? "deterministic" : "probabilistic"; }

Variant variant_from_string(const std::string& name) {
    if (name == "deterministic") return Variant::deterministic;
    if (name == "probabilistic") return Variant::probabilistic;
    throw ParameterError("unknown model variant '" + name + "'");
}

SpectrumParams Model::spectrum() const {
    if (variant == Variant::probabilistic) return positive_spectrum(spectrum_raw.values());
    return SpectrumParams::from_interleaved(spectrum_raw.values());
}

double Model::noise_variance() const { return std::exp(decoder.log_noise_var[0]); }

Model init_model(const ArchitectureSpec& spec, Variant variant, std::uint64_t seed) {
    Model m;
    m.variant = variant;
    m.encoder = init_encoder(spec, variant == Variant::probabilistic, derive_seed(seed, streams::encoder));
    m.decoder = init_decoder(spec, derive_seed(seed, streams::decoder));
    std::mt19937_64 rng(derive_seed(seed, streams::spectrum));
    const SpectrumParams lambda = init_spectrum(spec.latent_dim, rng);
    const auto raw = variant == Variant::probabilistic ? raw_from_positive_spectrum(lambda) : lambda.interleaved();
    m.spectrum_raw = Tensor(std::vector<std::size_t>{1, raw.size()}, raw);
    return m;
}

std::vector<ParamBlock> parameter_blocks(Model& model) {
    std::vector<ParamBlock> blocks;
    for (std::size_t l = 0; l < model.encoder.layers.size(); ++l) {
        blocks.push_back({"encoder." + std::to_string(l) + ".weight", &model.encoder.layers[l].weight});
        blocks.push_back({"encoder." + std::to_string(l) + ".bias", &model.encoder.layers[l].bias});
    }
    for (std::size_t l = 0; l < model.decoder.layers.size(); ++l) {
        blocks.push_back({"decoder." + std::to_string(l) + ".weight", &model.decoder.layers[l].weight});
        blocks.push_back({"decoder." + std::to_string(l) + ".bias", &model.decoder.layers[l].bias});
    }
    blocks.push_back({"spectrum", &model.spectrum_raw});
    if (model.variant == Variant::probabilistic) blocks.push_back({"decoder.log_noise_var", &model.decoder.log_noise_var});
    return blocks;
}

std::vector<std::string> parameter_names(const Model& model) {
    std::vector<std::string> names;
    for (auto& b : parameter_blocks(const_cast<Model&>(model))) names.push_back(b.name);
    return names;
}

BoundModel bind_model(Tape& tape, const Model& model, bool trainable) {
    BoundModel b;
    b.encoder = bind_layers(tape, model.encoder.layers, trainable);
    b.decoder = bind_layers(tape, model.decoder.layers, trainable);
    b.spectrum_raw = trainable ? tape.variable(model.spectrum_raw) : tape.constant(model.spectrum_raw);
    for (const auto& l : b.encoder) {
        b.leaves.push_back(l.weight);
        b.leaves.push_back(l.bias);
    }
    for (const auto& l : b.decoder) {
        b.leaves.push_back(l.weight);
        b.leaves.push_back(l.bias);
    }
    b.leaves.push_back(b.spectrum_raw);
    if (model.variant == Variant::probabilistic) {
        b.spectrum = positive_spectrum(b.spectrum_raw);
        b.log_noise_var =
            trainable ? tape.variable(model.decoder.log_noise_var) : tape.constant(model.decoder.log_noise_var);
        b.leaves.push_back(b.log_noise_var);
    } else {
        b.spectrum = b.spectrum_raw;
    }
    return b;
}

nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("data").get<std::vector<double>>());
}

nlohmann::json model_to_json(const Model& m) {
    return {{"format", kModelFormat},
            {"version", kModelVersion},
            {"variant", to_string(m.variant)},
            {"architecture", spec_to_json(m.encoder.spec)},
            {"encoder", {{"variational", m.encoder.variational}, {"layers", layers_to_json(m.encoder.layers)}}},
            {"decoder", {{"layers", layers_to_json(m.decoder.layers)}, {"log_noise_var", m.decoder.log_noise_var[0]}}},
            {"spectrum_raw", m.spectrum_raw.storage()}};
}

Model model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kModelFormat) throw IoError("not a model file");
        if (j.at("version").get<int>() != kModelVersion) throw IoError("unsupported model file version");
        Model m;
        m.variant = variant_from_string(j.at("variant").get<std::string>());
        const ArchitectureSpec spec = spec_from_json(j.at("architecture"));
        m.encoder.spec = spec;
        m.encoder.variational = j.at("encoder").at("variational").get<bool>();
        m.encoder.layers = layers_from_json(j.at("encoder").at("layers"), encoder_widths(spec, m.encoder.variational));
        m.decoder.spec = spec;
        m.decoder.layers = layers_from_json(j.at("decoder").at("layers"), decoder_widths(spec));
        m.decoder.log_noise_var = Tensor::scalar(j.at("decoder").at("log_noise_var").get<double>());
        const auto raw = j.at("spectrum_raw").get<std::vector<double>>();
        if (raw.size() != 2 * spec.latent_dim) throw IoError("model file: spectrum size mismatch");
        m.spectrum_raw = Tensor(std::vector<std::size_t>{1, raw.size()}, raw);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model file: ") + e.what());
    } catch (const ParameterError& e) {
        throw IoError(std::string("model file: ") + e.what());
    }
}

void save_model(const Model& model, const std::filesystem::path& path) {
    write_file_atomic(path, model_to_json(model).dump(1) + "\n");
}

Model load_model(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse model file " + path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace tsrom
