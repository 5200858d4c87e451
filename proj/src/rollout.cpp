#include "tsrom/rollout.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"
#include "tsrom/networks.hpp"

namespace tsrom {

namespace {

void check_queries(double anchor_time, std::span<const double> query_times) {
    if (query_times.empty()) throw ParameterError("rollout: no query times");
    for (std::size_t i = 0; i < query_times.size(); ++i) {
        if (!std::isfinite(query_times[i])) throw ParameterError("rollout: non-finite query time");
        if (query_times[i] < anchor_time) throw ParameterError("rollout: query time precedes the anchor");
        if (i > 0 && !(query_times[i] > query_times[i - 1])) {
            throw ParameterError("rollout: query times must be strictly increasing");
        }
    }
}

void check_anchor(const Model& model, std::span<const double> x) {
    if (x.size() != model.state_dim()) {
        throw DimensionError("rollout: anchor has " + std::to_string(x.size()) + " channels, model expects " +
                             std::to_string(model.state_dim()));
    }
}

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string indexed(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

}  // namespace

Rollout rollout_deterministic(const Model& model, std::span<const double> x_anchor, double anchor_time,
                              std::span<const double> query_times) {
    check_anchor(model, x_anchor);
    check_queries(anchor_time, query_times);
    const LatentState z0 = encode(x_anchor, model.encoder);
    const SpectrumParams lambda = model.spectrum();
    const std::size_t c = model.latent_dim();
    const std::size_t t_count = query_times.size();

    Rollout r;
    r.times.assign(query_times.begin(), query_times.end());
    r.latent_mean = Tensor(t_count, 2 * c);
    for (std::size_t t = 0; t < t_count; ++t) {
        const LatentState z = propagate(z0, lambda, query_times[t] - anchor_time);
        for (std::size_t i = 0; i < c; ++i) {
            r.latent_mean(t, 2 * i) = z[i].real();
            r.latent_mean(t, 2 * i + 1) = z[i].imag();
        }
    }
    r.mean = decode_rows(r.latent_mean, model.decoder);
    return r;
}

Rollout rollout_probabilistic(const Model& model, std::span<const double> x_anchor, double anchor_time,
                              std::span<const double> query_times, std::size_t n_samples, std::mt19937_64& rng,
                              const OUParams* ou) {
    if (model.variant != Variant::probabilistic || !model.encoder.variational) {
        throw ConfigError("probabilistic rollout needs a probabilistic model");
    }
    check_anchor(model, x_anchor);
    check_queries(anchor_time, query_times);
    if (n_samples < 1) throw ParameterError("probabilistic rollout: n_samples must be at least 1");

    const SpectrumParams lambda = model.spectrum();
    const std::size_t c = model.latent_dim();
    const std::size_t f = model.state_dim();
    const OUParams tied = tie_sfa(lambda);
    if (ou) {
        if (!ou->tied || ou->sigma_sq != tied.sigma_sq || ou->sigma0_sq != tied.sigma0_sq) {
            throw ConfigError("probabilistic rollout: OU parameters are not tied to the spectrum");
        }
    }

    const VariationalLatent posterior = encode_variational(x_anchor, model.encoder);
    const double noise = model.noise_variance();
    const std::size_t t_count = query_times.size();

    Rollout r;
    r.probabilistic = true;
    r.times.assign(query_times.begin(), query_times.end());
    r.mean = Tensor(t_count, f);
    r.variance = Tensor(t_count, f);
    r.latent_mean = Tensor(t_count, 2 * c);
    r.latent_variance = Tensor(t_count, c);
    std::normal_distribution<double> normal;

    for (std::size_t t = 0; t < t_count; ++t) {
        const double dt = query_times[t] - anchor_time;
        const LatentState mu = propagate(posterior.mean, lambda, dt);
        std::vector<double> var(c);
        for (std::size_t i = 0; i < c; ++i) {
            var[i] = propagate_variance(posterior.variance[i], lambda.lambda[i], tied.sigma_sq[i], dt);
            r.latent_mean(t, 2 * i) = mu[i].real();
            r.latent_mean(t, 2 * i + 1) = mu[i].imag();
            r.latent_variance(t, i) = var[i];
        }
        Tensor draws(n_samples, 2 * c);
        for (std::size_t s = 0; s < n_samples; ++s) {
            for (std::size_t i = 0; i < c; ++i) {
                const double sd = std::sqrt(var[i] / 2.0);
                draws(s, 2 * i) = mu[i].real() + sd * normal(rng);
                draws(s, 2 * i + 1) = mu[i].imag() + sd * normal(rng);
            }
        }
        const Tensor decoded = decode_rows(draws, model.decoder);
        for (std::size_t k = 0; k < f; ++k) {
            double sum = 0.0;
            for (std::size_t s = 0; s < n_samples; ++s) sum += decoded(s, k);
            const double m = sum / static_cast<double>(n_samples);
            double ss = 0.0;
            for (std::size_t s = 0; s < n_samples; ++s) ss += (decoded(s, k) - m) * (decoded(s, k) - m);
            r.mean(t, k) = m;
            r.variance(t, k) = (n_samples > 1 ? ss / static_cast<double>(n_samples - 1) : 0.0) + noise;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------

PhaseCloud phase_cloud(std::span<const double> times, const Tensor& states) {
    const std::size_t n = times.size();
    if (n < 3) throw ParameterError("phase_cloud: need at least three time points");
    if (states.rank() != 2 || states.rows() != n) throw DimensionError("phase_cloud: states do not match times");
    const double dt = (times[n - 1] - times[0]) / static_cast<double>(n - 1);
    if (!(dt > 0.0)) throw ParameterError("phase_cloud: times must increase");
    for (std::size_t i = 1; i < n; ++i) {
        if (std::abs((times[i] - times[i - 1]) - dt) > 1e-9 * std::max(1.0, dt)) {
            throw ParameterError("phase_cloud: time stamps are not uniformly spaced; resample first");
        }
    }
    PhaseCloud cloud;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        for (std::size_t k = 0; k < states.cols(); ++k) {
            cloud.u.push_back(states(i, k));
            cloud.dudt.push_back((states(i + 1, k) - states(i - 1, k)) / (2.0 * dt));
        }
    }
    return cloud;
}

PhaseGrid PhaseGrid::bounding(const PhaseCloud& cloud, std::size_t u_bins, std::size_t d_bins) {
    if (cloud.size() == 0) throw ParameterError("phase grid: empty cloud");
    PhaseGrid g;
    g.u_bins = u_bins;
    g.d_bins = d_bins;
    g.u_min = g.u_max = cloud.u[0];
    g.d_min = g.d_max = cloud.dudt[0];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        g.u_min = std::min(g.u_min, cloud.u[i]);
        g.u_max = std::max(g.u_max, cloud.u[i]);
        g.d_min = std::min(g.d_min, cloud.dudt[i]);
        g.d_max = std::max(g.d_max, cloud.dudt[i]);
    }
    // widen degenerate extents so every point lands inside
    if (g.u_max == g.u_min) g.u_max = g.u_min + 1.0;
    if (g.d_max == g.d_min) g.d_max = g.d_min + 1.0;
    return g;
}

double phase_overlap(const PhaseCloud& a, const PhaseCloud& b, const PhaseGrid& grid) {
    if (a.size() == 0 || b.size() == 0) throw ParameterError("phase_overlap: empty cloud");
    if (grid.u_bins == 0 || grid.d_bins == 0 || !(grid.u_max > grid.u_min) || !(grid.d_max > grid.d_min)) {
        throw ParameterError("phase_overlap: degenerate grid");
    }
    const std::size_t overflow = grid.u_bins * grid.d_bins;
    auto histogram = [&](const PhaseCloud& cloud) {
        std::vector<double> h(overflow + 1, 0.0);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const double fu = (cloud.u[i] - grid.u_min) / (grid.u_max - grid.u_min);
            const double fd = (cloud.dudt[i] - grid.d_min) / (grid.d_max - grid.d_min);
            if (!(fu >= 0.0 && fu <= 1.0 && fd >= 0.0 && fd <= 1.0)) {
                h[overflow] += 1.0;
                continue;
            }
            const auto iu = std::min(static_cast<std::size_t>(fu * grid.u_bins), grid.u_bins - 1);
            const auto id = std::min(static_cast<std::size_t>(fd * grid.d_bins), grid.d_bins - 1);
            h[iu * grid.d_bins + id] += 1.0;
        }
        for (double& x : h) x /= static_cast<double>(cloud.size());
        return h;
    };
    const auto ha = histogram(a);
    const auto hb = histogram(b);
    double tv = 0.0;
    for (std::size_t i = 0; i < ha.size(); ++i) tv += std::abs(ha[i] - hb[i]);
    return std::clamp(1.0 - 0.5 * tv, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j = {{"times", times},
                        {"relative_error", relative_error},
                        {"mean_relative_error", mean_relative_error}};
    if (coverage) j["coverage_2sd"] = *coverage;
    return j;
}

MetricsReport metrics(const Rollout& pred, std::span<const double> ref_times, const Tensor& ref_states) {
    if (pred.size() != ref_times.size()) throw ParameterError("metrics: prediction and reference have different times");
    for (std::size_t t = 0; t < ref_times.size(); ++t) {
        if (std::abs(pred.times[t] - ref_times[t]) > 1e-9 * std::max(1.0, std::abs(ref_times[t]))) {
            throw ParameterError("metrics: time mismatch at row " + std::to_string(t));
        }
    }
    if (!ref_states.same_extents(pred.mean)) throw DimensionError("metrics: reference and prediction shapes differ");
    MetricsReport rep;
    rep.times = pred.times;
    const std::size_t f = ref_states.cols();
    std::size_t inside = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < f; ++k) {
            const double d = pred.mean(t, k) - ref_states(t, k);
            num += d * d;
            den += ref_states(t, k) * ref_states(t, k);
            if (pred.probabilistic && std::abs(d) <= 2.0 * std::sqrt(pred.variance(t, k))) ++inside;
        }
        // a zero reference has no scale; report the absolute error instead
        rep.relative_error.push_back(den > 0.0 ? std::sqrt(num / den) : std::sqrt(num));
    }
    double sum = 0.0;
    for (double e : rep.relative_error) sum += e;
    rep.mean_relative_error = sum / static_cast<double>(rep.relative_error.size());
    if (pred.probabilistic) rep.coverage = static_cast<double>(inside) / static_cast<double>(pred.size() * f);
    return rep;
}

// ---------------------------------------------------------------------------

bool Table::has(const std::string& column) const {
    return std::find(columns.begin(), columns.end(), column) != columns.end();
}

std::size_t Table::index(const std::string& column) const {
    const auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) throw IoError("table is missing column '" + column + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> Table::column(const std::string& name) const {
    const std::size_t j = index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[j]);
    return out;
}

std::string format_table(const Table& table) {
    std::string out;
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
        if (j) out += ',';
        out += table.columns[j];
    }
    out += '\n';
    for (const auto& row : table.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out += ',';
            out += format_double(row[j]);
        }
        out += '\n';
    }
    return out;
}

Table parse_table(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    Table t;
    if (!std::getline(in, line)) throw IoError("table is empty");
    {
        std::istringstream hs(line);
        std::string name;
        while (std::getline(hs, name, ',')) t.columns.push_back(name);
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream rs(line);
        std::string cell;
        while (std::getline(rs, cell, ',')) {
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
                throw IoError("table line " + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
            row.push_back(v);
        }
        if (row.size() != t.columns.size()) {
            throw IoError("table line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                          " cells, header has " + std::to_string(t.columns.size()));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_table(const Table& table, const std::filesystem::path& path) { write_file_atomic(path, format_table(table)); }

Table read_table(const std::filesystem::path& path) { return parse_table(read_file(path)); }

Table rollout_table(const Rollout& r) {
    Table t;
    const std::size_t f = r.mean.cols();
    const std::size_t c = r.latent_mean.storage().empty() ? 0 : r.latent_mean.cols() / 2;
    t.columns.push_back("time");
    for (std::size_t k = 0; k < f; ++k) t.columns.push_back(indexed("x", k));
    if (r.probabilistic) {
        for (std::size_t k = 0; k < f; ++k) t.columns.push_back(indexed("var", k));
        for (std::size_t i = 0; i < c; ++i) {
            t.columns.push_back(indexed("zre", i));
            t.columns.push_back(indexed("zim", i));
        }
        for (std::size_t i = 0; i < c; ++i) t.columns.push_back(indexed("zvar", i));
    }
    for (std::size_t n = 0; n < r.size(); ++n) {
        std::vector<double> row{r.times[n]};
        for (std::size_t k = 0; k < f; ++k) row.push_back(r.mean(n, k));
        if (r.probabilistic) {
            for (std::size_t k = 0; k < f; ++k) row.push_back(r.variance(n, k));
            for (std::size_t i = 0; i < 2 * c; ++i) row.push_back(r.latent_mean(n, i));
            for (std::size_t i = 0; i < c; ++i) row.push_back(r.latent_variance(n, i));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

Rollout rollout_from_table(const Table& table) {
    if (table.rows.empty()) throw IoError("table has no rows");
    Rollout r;
    r.times = table.column("time");
    std::size_t f = 0;
    while (table.has(indexed("x", f))) ++f;
    if (f == 0) throw IoError("table is missing column 'x0'");
    r.probabilistic = table.has("var0");
    r.mean = Tensor(r.times.size(), f);
    if (r.probabilistic) r.variance = Tensor(r.times.size(), f);
    for (std::size_t k = 0; k < f; ++k) {
        const auto x = table.column(indexed("x", k));
        for (std::size_t n = 0; n < x.size(); ++n) r.mean(n, k) = x[n];
        if (r.probabilistic) {
            const auto v = table.column(indexed("var", k));
            for (std::size_t n = 0; n < v.size(); ++n) r.variance(n, k) = v[n];
        }
    }
    return r;
}

Table phase_table(const PhaseCloud& cloud) {
    Table t;
    t.columns = {"u", "dudt"};
    for (std::size_t i = 0; i < cloud.size(); ++i) t.rows.push_back({cloud.u[i], cloud.dudt[i]});
    return t;
}

}  // namespace tsrom
