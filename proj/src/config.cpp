#include "tsrom/config.hpp"

#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"

namespace tsrom {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kRunKeys = {
    {"run", {"experiment", "variant", "seed"}},
    {"model", {"architecture", "latent_dim", "hidden", "dropout"}},
    {"train",
     {"iterations", "learning_rate", "beta1", "beta2", "epsilon", "batch_size", "window", "log_every",
      "checkpoint_every", "elbo_samples", "prior_precision"}},
};

const std::map<Experiment, std::set<std::string>> kDataKeys = {
    {Experiment::linear_ode, {"system", "initial", "t_max", "step", "n_series", "points_per_series", "irregular"}},
    {Experiment::multiscale,
     {"rates", "initial", "observed_dim", "t_max", "dt", "n_series", "points_per_series"}},
    {Experiment::ks,
     {"viscosity", "length", "grid", "step", "stride", "n_outputs", "perturbation", "n_series", "points_per_series"}},
};

class Section {
public:
    Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

    template <class T>
    void get(const char* key, T& out) const {
        if (!tree_) return;
        const auto raw = tree_->get_optional<std::string>(key);
        if (!raw) return;
        std::istringstream in(*raw);
        T value{};
        if constexpr (std::is_same_v<T, bool>) {
            std::string word;
            in >> word;
            if (word == "true" || word == "1" || word == "yes") value = true;
            else if (word == "false" || word == "0" || word == "no") value = false;
            else fail(key, *raw, "a boolean");
        } else if constexpr (std::is_same_v<T, std::string>) {
            in >> value;
        } else {
            if (!(in >> value)) fail(key, *raw, "a number");
            if constexpr (std::is_unsigned_v<T>) {
                if (raw->find('-') != std::string::npos) fail(key, *raw, "a non-negative integer");
            }
        }
        std::string rest;
        if (in >> rest) fail(key, *raw, "a single value");
        out = value;
    }

    std::vector<std::vector<double>> rows(const char* key) const {
        std::vector<std::vector<double>> out;
        if (!tree_) return out;
        const auto raw = tree_->get_optional<std::string>(key);
        if (!raw) return out;
        std::istringstream rows_in(*raw);
        std::string row;
        while (std::getline(rows_in, row, ';')) {
            std::istringstream in(row);
            std::vector<double> values;
            std::string cell;
            while (in >> cell) {
                if (!cell.empty() && cell.back() == ',') cell.pop_back();
                if (cell.empty()) continue;
                try {
                    std::size_t used = 0;
                    values.push_back(std::stod(cell, &used));
                    if (used != cell.size()) throw std::invalid_argument(cell);
                } catch (const std::exception&) {
                    fail(key, *raw, "numbers separated by spaces and ';'");
                }
            }
            if (!values.empty()) out.push_back(std::move(values));
        }
        return out;
    }

    bool has(const char* key) const { return tree_ && tree_->get_optional<std::string>(key).has_value(); }

    [[noreturn]] void fail(const char* key, const std::string& raw, const char* expected) const {
        throw ConfigError("[" + name_ + "] " + key + " = '" + raw + "': expected " + expected);
    }

private:
    const pt::ptree* tree_;
    std::string name_;
};

std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
    std::vector<double> out;
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}

std::vector<Complex> complex_rows(const Section& s, const char* key) {
    std::vector<Complex> out;
    for (const auto& r : s.rows(key)) {
        if (r.size() != 2) s.fail(key, "...", "'re im' pairs separated by ';'");
        out.emplace_back(r[0], r[1]);
    }
    return out;
}

void apply_defaults(RunConfig& c) {
    switch (c.experiment) {
        case Experiment::linear_ode:
            c.architecture = {2, 2, ArchitectureKind::linear};
            c.train.iterations = 5000;
            c.train.adam.learning_rate = 1e-2;
            // A shorter second-moment memory lets the imaginary parts settle within the budget.
            c.train.adam.beta2 = 0.99;
            break;
        case Experiment::multiscale:
            c.architecture = {8, 2, ArchitectureKind::linear};
            c.train.iterations = 5000;
            c.train.adam.learning_rate = 1e-3;
            break;
        case Experiment::ks:
            c.architecture = {64, 5, ArchitectureKind::mlp4};
            c.train.iterations = 200000;
            c.train.adam.learning_rate = 5e-4;
            c.train.batch_size = 8;
            c.train.window = 25;
            break;
    }
}

}  // namespace

std::string to_string(Experiment e) {
    switch (e) {
        case Experiment::linear_ode: return "linear-ode";
        case Experiment::multiscale: return "multiscale";
        case Experiment::ks: return "ks";
    }
    return "?";
}

Experiment experiment_from_string(const std::string& name) {
    if (name == "linear-ode") return Experiment::linear_ode;
    if (name == "multiscale") return Experiment::multiscale;
    if (name == "ks") return Experiment::ks;
    throw ConfigError("[run] experiment = '" + name + "': expected linear-ode, multiscale or ks");
}

nlohmann::json RunConfig::generator_json() const {
    switch (experiment) {
        case Experiment::linear_ode: return linear_ode.to_json();
        case Experiment::multiscale: return multiscale.to_json();
        case Experiment::ks: return ks.to_json();
    }
    return {};
}

std::string RunConfig::data_digest() const { return config_digest(generator_json()); }

nlohmann::json RunConfig::to_json() const {
    const auto& a = architecture;
    const auto& t = train;
    return {{"experiment", to_string(experiment)},
            {"variant", to_string(variant)},
            {"seed", seed},
            {"data", generator_json()},
            {"model",
             {{"architecture", to_string(a.kind)},
              {"input_dim", a.input_dim},
              {"latent_dim", a.latent_dim},
              {"hidden", a.hidden},
              {"dropout", a.dropout}}},
            {"train",
             {{"iterations", t.iterations},
              {"learning_rate", t.adam.learning_rate},
              {"beta1", t.adam.beta1},
              {"beta2", t.adam.beta2},
              {"epsilon", t.adam.epsilon},
              {"batch_size", t.batch_size},
              {"window", t.window},
              {"log_every", t.log_every},
              {"checkpoint_every", t.checkpoint_every},
              {"elbo_samples", t.elbo_samples},
              {"prior_precision", t.prior_precision}}}};
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

RunConfig parse_run_config(std::string_view text) {
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }

    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' is outside a section");
        if (section != "data" && !kRunKeys.contains(section)) throw ConfigError("unknown config section [" + section + "]");
    }
    auto section = [&](const char* name) {
        const auto child = tree.get_child_optional(name);
        return Section(child ? &*child : nullptr, name);
    };
    auto check_keys = [&](const std::string& name, const std::set<std::string>& allowed) {
        const auto child = tree.get_child_optional(name);
        if (!child) return;
        for (const auto& [key, value] : *child) {
            if (!allowed.contains(key)) throw ConfigError("unknown config key [" + name + "] " + key);
        }
    };
    for (const auto& [name, keys] : kRunKeys) check_keys(name, keys);

    RunConfig c;
    const Section run = section("run");
    if (!run.has("experiment")) throw ConfigError("[run] experiment is required");
    std::string word;
    run.get("experiment", word);
    c.experiment = experiment_from_string(word);
    if (run.has("variant")) {
        run.get("variant", word);
        try {
            c.variant = variant_from_string(word);
        } catch (const Error& e) {
            throw ConfigError(std::string("[run] variant: ") + e.what());
        }
    }
    run.get("seed", c.seed);
    check_keys("data", kDataKeys.at(c.experiment));
    apply_defaults(c);

    const Section data = section("data");
    switch (c.experiment) {
        case Experiment::linear_ode: {
            auto& d = c.linear_ode;
            if (data.has("system")) {
                const auto rows = data.rows("system");
                try {
                    d.system = Tensor::from_rows(rows);
                } catch (const Error&) {
                    data.fail("system", "...", "a square matrix written row by row");
                }
            }
            if (data.has("initial")) d.initial = flatten(data.rows("initial"));
            data.get("t_max", d.t_max);
            data.get("step", d.step);
            data.get("n_series", d.n_series);
            data.get("points_per_series", d.points_per_series);
            data.get("irregular", d.irregular);
            d.validate();
            c.architecture.input_dim = d.initial.size();
            break;
        }
        case Experiment::multiscale: {
            auto& d = c.multiscale;
            if (data.has("rates")) d.rates = complex_rows(data, "rates");
            if (data.has("initial")) d.initial = complex_rows(data, "initial");
            data.get("observed_dim", d.observed_dim);
            data.get("t_max", d.t_max);
            data.get("dt", d.dt);
            data.get("n_series", d.n_series);
            data.get("points_per_series", d.points_per_series);
            d.validate();
            c.architecture.input_dim = d.observed_dim;
            break;
        }
        case Experiment::ks: {
            auto& d = c.ks;
            data.get("viscosity", d.viscosity);
            data.get("length", d.length);
            data.get("grid", d.grid);
            data.get("step", d.step);
            data.get("stride", d.stride);
            data.get("n_outputs", d.n_outputs);
            data.get("perturbation", d.perturbation);
            data.get("n_series", d.n_series);
            data.get("points_per_series", d.points_per_series);
            d.validate();
            c.architecture.input_dim = d.grid;
            break;
        }
    }

    const Section model = section("model");
    if (model.has("architecture")) {
        model.get("architecture", word);
        try {
            c.architecture.kind = architecture_from_string(word);
        } catch (const Error& e) {
            throw ConfigError(std::string("[model] ") + e.what());
        }
    }
    model.get("latent_dim", c.architecture.latent_dim);
    if (model.has("hidden")) {
        c.architecture.hidden.clear();
        for (double w : flatten(model.rows("hidden"))) {
            if (w < 1 || w != static_cast<double>(static_cast<std::size_t>(w))) {
                model.fail("hidden", std::to_string(w), "positive integer widths");
            }
            c.architecture.hidden.push_back(static_cast<std::size_t>(w));
        }
    }
    model.get("dropout", c.architecture.dropout);
    try {
        c.architecture.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("[model] ") + e.what());
    }

    const Section tr = section("train");
    auto& t = c.train;
    tr.get("iterations", t.iterations);
    tr.get("learning_rate", t.adam.learning_rate);
    tr.get("beta1", t.adam.beta1);
    tr.get("beta2", t.adam.beta2);
    tr.get("epsilon", t.adam.epsilon);
    tr.get("batch_size", t.batch_size);
    tr.get("window", t.window);
    tr.get("log_every", t.log_every);
    tr.get("checkpoint_every", t.checkpoint_every);
    tr.get("elbo_samples", t.elbo_samples);
    tr.get("prior_precision", t.prior_precision);
    if (!(t.adam.learning_rate > 0.0)) throw ConfigError("[train] learning_rate must be positive");
    if (!(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0) || !(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0)) {
        throw ConfigError("[train] beta1 and beta2 must lie in [0, 1)");
    }
    if (!(t.adam.epsilon > 0.0)) throw ConfigError("[train] epsilon must be positive");
    if (t.batch_size > 0 && t.window < 1) throw ConfigError("[train] window is required with batch_size");
    if (t.elbo_samples < 1) throw ConfigError("[train] elbo_samples must be at least 1");
    if (t.prior_precision < 0.0) throw ConfigError("[train] prior_precision must be non-negative");
    t.seed = c.seed;
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    try {
        return parse_run_config(read_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Dataset generate_dataset(const RunConfig& config) {
    switch (config.experiment) {
        case Experiment::linear_ode: return gen_linear_ode(config.linear_ode, config.seed);
        case Experiment::multiscale: return gen_hidden_multiscale(config.multiscale, config.seed);
        case Experiment::ks: return gen_ks(config.ks, config.seed);
    }
    throw ConfigError("unknown experiment");
}

}  // namespace tsrom
