#include "tsrom/objectives.hpp"

#include <cmath>
#include <numbers>

#include "tsrom/errors.hpp"

namespace tsrom {

namespace {

constexpr double kLogPi = 1.1447298858494002;   // log(pi)
constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

// c x 2c matrix copying each component value onto its (re, im) channel pair.
Tensor pair_expand(std::size_t c) {
    Tensor t(c, 2 * c);
    for (std::size_t i = 0; i < c; ++i) t(i, 2 * i) = t(i, 2 * i + 1) = 1.0;
    return t;
}

// 2c x c matrix summing each (re, im) channel pair.
Tensor pair_sum(std::size_t c) { return transpose(pair_expand(c)); }

// 2c x c matrix picking the real channel of each pair.
Tensor real_select(std::size_t c) {
    Tensor t(2 * c, c);
    for (std::size_t i = 0; i < c; ++i) t(2 * i, i) = 1.0;
    return t;
}

// Row indices of `rows` repeated for each of `copies` sample blocks.
std::vector<std::size_t> tile(const std::vector<std::size_t>& rows, std::size_t block, std::size_t copies) {
    std::vector<std::size_t> out;
    out.reserve(rows.size() * copies);
    for (std::size_t s = 0; s < copies; ++s) {
        for (auto r : rows) out.push_back(r + s * block);
    }
    return out;
}

// Sum over all columns of each consecutive block of `block` rows.
std::vector<double> block_sums(const Tensor& t, std::size_t block, std::size_t copies) {
    std::vector<double> out(copies, 0.0);
    for (std::size_t s = 0; s < copies; ++s) {
        for (std::size_t r = 0; r < block; ++r) {
            for (std::size_t c = 0; c < t.cols(); ++c) out[s] += t(s * block + r, c);
        }
    }
    return out;
}

double scalar_of(Var v) { return v.value()[0]; }

}  // namespace

Batch make_batch(const Dataset& data, const std::vector<WindowRef>& windows) {
    if (windows.empty()) throw ParameterError("batch: no windows");
    std::size_t total = 0;
    for (const auto& w : windows) {
        if (w.series >= data.series.size()) throw ParameterError("batch: series index out of range");
        if (w.length == 0 || w.offset + w.length > data.series[w.series].size()) {
            throw ParameterError("batch: window exceeds its series");
        }
        total += w.length;
    }
    Batch b;
    b.states = Tensor(total, data.state_dim);
    std::size_t row = 0;
    for (const auto& w : windows) {
        const Series& s = data.series[w.series];
        b.window_starts.push_back(row);
        for (std::size_t i = 0; i < w.length; ++i) {
            for (std::size_t c = 0; c < data.state_dim; ++c) b.states(row + i, c) = s.states(w.offset + i, c);
            if (i + 1 < w.length) {
                const double dt = s.times[w.offset + i + 1] - s.times[w.offset + i];
                if (!(dt > 0.0)) throw ParameterError("batch: non-positive time gap");
                b.from_rows.push_back(row + i);
                b.to_rows.push_back(row + i + 1);
                b.gaps.push_back(dt);
            }
        }
        row += w.length;
    }
    return b;
}

Batch full_batch(const Dataset& data) {
    std::vector<WindowRef> windows;
    for (std::size_t k = 0; k < data.series.size(); ++k) windows.push_back({k, 0, data.series[k].size()});
    return make_batch(data, windows);
}

LossGraph deterministic_loss(Tape& tape, const BoundModel& bound, const Model& model, const Batch& batch,
                             const ForwardOptions& options) {
    const auto& spec = model.encoder.spec;
    if (batch.states.cols() != spec.input_dim) throw DimensionError("loss: batch state dimension mismatch");
    const Var x = tape.constant(batch.states);
    const Var z = mlp_forward(x, bound.encoder, spec.kind, spec.dropout, options);
    const Var x_hat = mlp_forward(z, bound.decoder, spec.kind, spec.dropout, options);

    LossGraph g;
    const Var recon = scale(sum_squares(sub(x, x_hat)), 1.0 / static_cast<double>(batch.size()));
    g.parts.emplace_back("reconstruction", recon);
    if (batch.pairs() == 0) {
        g.total = recon;
        g.parts.emplace_back("propagation", tape.constant(Tensor::scalar(0.0)));
        g.report.propagation_undefined = true;
    } else {
        const Var z_from = gather_rows(z, batch.from_rows);
        const Var z_to = gather_rows(z, batch.to_rows);
        const Var predicted = propagate(z_from, bound.spectrum, batch.gaps);
        const Var prop = scale(sum_squares(sub(z_to, predicted)), 1.0 / static_cast<double>(batch.pairs()));
        g.parts.emplace_back("propagation", prop);
        g.total = add(recon, prop);
    }
    for (const auto& [name, v] : g.parts) g.report.parts[name] = scalar_of(v);
    g.report.total = scalar_of(g.total);
    return g;
}

LossReport deterministic_loss(const Batch& batch, const Model& model) {
    Tape tape;
    const BoundModel bound = bind_model(tape, model, false);
    return deterministic_loss(tape, bound, model, batch, ForwardOptions{}).report;
}

LatentState reparam_sample(const LatentState& mean, std::span<const double> var, std::span<const double> noise) {
    if (var.size() != mean.size() || noise.size() != 2 * mean.size()) {
        throw DimensionError("reparam_sample: mean, variance and noise sizes disagree");
    }
    LatentState z(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (!(var[i] >= 0.0)) throw ParameterError("reparam_sample: variance must be non-negative");
        const double sd = std::sqrt(0.5 * var[i]);
        z[i] = mean[i] + Complex(sd * noise[2 * i], sd * noise[2 * i + 1]);
    }
    return z;
}

LossGraph elbo_loss(Tape& tape, const BoundModel& bound, const Model& model, const Batch& batch,
                    std::mt19937_64& rng, const ElboOptions& options, const ForwardOptions& forward) {
    if (model.variant != Variant::probabilistic) throw ConfigError("elbo: model is not probabilistic");
    if (options.n_samples == 0) throw ParameterError("elbo: n_samples must be positive");
    const auto& spec = model.encoder.spec;
    const std::size_t c = spec.latent_dim;
    const std::size_t f = spec.input_dim;
    const std::size_t n = batch.size();
    const std::size_t n_pairs = batch.pairs();
    const std::size_t n_windows = batch.window_starts.size();
    const std::size_t samples = options.n_samples;
    const double inv_samples = 1.0 / static_cast<double>(samples);
    if (batch.states.cols() != f) throw DimensionError("elbo: batch state dimension mismatch");

    // Amortised posterior q(z_n | x_n) = CN(mean_n, exp(logvar_n)).
    const Var x = tape.constant(batch.states);
    const Var head = mlp_forward(x, bound.encoder, spec.kind, spec.dropout, forward);
    const Var mean = slice_cols(head, 0, 2 * c);
    const Var logvar = slice_cols(head, 2 * c, c);

    // Reparametrised draws, sample-major: rows [s*n, (s+1)*n) belong to draw s.
    std::vector<std::size_t> all_rows;
    all_rows.reserve(n * samples);
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t r = 0; r < n; ++r) all_rows.push_back(r);
    }
    Tensor noise(n * samples, 2 * c);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
    const Var mean_s = gather_rows(mean, all_rows);
    const Var logvar_s = gather_rows(logvar, all_rows);
    const Var half_sd = exp(shift(scale(logvar_s, 0.5), -0.5 * std::numbers::ln2));  // sqrt(v / 2)
    const Var sd_channels = matmul(half_sd, tape.constant(pair_expand(c)));
    const Var z = add(mean_s, mul(sd_channels, tape.constant(noise)));

    // Decoder likelihood N(x | G(z), s^2 I).
    Tensor x_tiled(n * samples, f);
    for (std::size_t s = 0; s < samples; ++s) {
        std::copy(batch.states.data(), batch.states.data() + n * f, x_tiled.data() + s * n * f);
    }
    const Var x_hat = mlp_forward(z, bound.decoder, spec.kind, spec.dropout, forward);
    const Var residual = sub(tape.constant(x_tiled), x_hat);
    const Var sq_residual = sum_squares(residual);
    const Var inv_noise = exp(scale(bound.log_noise_var, -1.0));
    const double n_obs = static_cast<double>(n * samples * f);
    const Var recon = scale(add(scale(mul(sq_residual, inv_noise), 0.5),
                                shift(scale(bound.log_noise_var, 0.5 * n_obs), 0.5 * n_obs * kLog2Pi)),
                            inv_samples);

    // Initial state of every window under CN(0, 1).
    std::vector<std::size_t> first_rows = tile(batch.window_starts, n, samples);
    const Var z0 = gather_rows(z, first_rows);
    const Var initial = scale(shift(sum_squares(z0), static_cast<double>(n_windows * samples * c) * kLogPi),
                              inv_samples);

    LossGraph g;
    g.parts.emplace_back("reconstruction", recon);
    g.parts.emplace_back("initial", initial);

    // OU transitions with tied noise: complex variance 1 - exp(-2 Re(lambda) dt).
    Var transition;
    Var trans_sq;
    Var trans_var;
    if (n_pairs > 0) {
        const auto from = tile(batch.from_rows, n, samples);
        const auto to = tile(batch.to_rows, n, samples);
        std::vector<double> gaps;
        gaps.reserve(n_pairs * samples);
        for (std::size_t s = 0; s < samples; ++s) gaps.insert(gaps.end(), batch.gaps.begin(), batch.gaps.end());
        const Var predicted = propagate(gather_rows(z, from), bound.spectrum, gaps);
        const Var diff = sub(gather_rows(z, to), predicted);
        trans_sq = matmul(square(diff), tape.constant(pair_sum(c)));  // |r_i|^2, (S*P) x c
        const Var decay = matmul(bound.spectrum, tape.constant(real_select(c)));  // 1 x c
        Tensor gap_col(gaps.size(), 1);
        for (std::size_t i = 0; i < gaps.size(); ++i) gap_col[i] = gaps[i];
        const Var rate_dt = matmul(tape.constant(gap_col), decay);  // (S*P) x c
        trans_var = scale(expm1(scale(rate_dt, -2.0)), -1.0);
        const double count = static_cast<double>(n_pairs * samples * c);
        transition = scale(shift(add(sum(log(trans_var)), sum(div(trans_sq, trans_var))), count * kLogPi),
                           inv_samples);
        g.parts.emplace_back("transition", transition);
    } else {
        g.parts.emplace_back("transition", tape.constant(Tensor::scalar(0.0)));
        g.report.propagation_undefined = true;
    }

    // Negative entropy of q, closed form: -sum log(pi e v).
    const Var entropy = scale(shift(sum(logvar), static_cast<double>(n * c) * (kLogPi + 1.0)), -1.0);
    g.parts.emplace_back("entropy", entropy);

    Var total = add(add(recon, initial), entropy);
    if (n_pairs > 0) total = add(total, transition);

    if (options.prior_precision > 0.0) {
        // -log p(theta) for the decoder, spectrum and noise blocks.
        Var acc = tape.constant(Tensor::scalar(0.0));
        for (const auto& l : bound.decoder) acc = add(acc, add(sum_squares(l.weight), sum_squares(l.bias)));
        acc = add(acc, sum_squares(bound.spectrum_raw));
        acc = add(acc, sum_squares(bound.log_noise_var));
        const Var prior = scale(acc, 0.5 * options.prior_precision);
        g.parts.emplace_back("prior", prior);
        total = add(total, prior);
    }
    g.total = total;
    for (const auto& [name, v] : g.parts) g.report.parts[name] = scalar_of(v);
    g.report.total = scalar_of(total);

    if (samples > 1) {
        // Per-draw totals from recorded values, for the Monte Carlo standard error.
        const double s2 = std::exp(-model.decoder.log_noise_var[0]);
        const double log_s2 = model.decoder.log_noise_var[0];
        Tensor r2 = residual.value();
        for (std::size_t i = 0; i < r2.size(); ++i) r2[i] *= r2[i];
        std::vector<double> per = block_sums(r2, n, samples);
        for (auto& v : per) v = 0.5 * s2 * v + 0.5 * static_cast<double>(n * f) * (kLog2Pi + log_s2);
        Tensor z0sq = z0.value();
        for (std::size_t i = 0; i < z0sq.size(); ++i) z0sq[i] *= z0sq[i];
        const auto init_per = block_sums(z0sq, n_windows, samples);
        for (std::size_t s = 0; s < samples; ++s) {
            per[s] += init_per[s] + static_cast<double>(n_windows * c) * kLogPi;
        }
        if (n_pairs > 0) {
            Tensor terms = trans_sq.value();
            const Tensor& v = trans_var.value();
            for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = terms[i] / v[i] + std::log(v[i]) + kLogPi;
            const auto trans_per = block_sums(terms, n_pairs, samples);
            for (std::size_t s = 0; s < samples; ++s) per[s] += trans_per[s];
        }
        double mean_v = 0.0;
        for (double v : per) mean_v += v;
        mean_v /= static_cast<double>(samples);
        double var = 0.0;
        for (double v : per) var += (v - mean_v) * (v - mean_v);
        var /= static_cast<double>(samples - 1);
        g.report.mc_std_error = std::sqrt(var / static_cast<double>(samples));
    }
    return g;
}

LossReport elbo(const Batch& batch, const Model& model, const OUParams& ou, std::mt19937_64& rng,
                std::size_t n_samples) {
    if (!ou.tied) throw ConfigError("elbo: OU parameters must be SFA-tied to the spectrum");
    const SpectrumParams lambda = model.spectrum();
    if (ou.sigma_sq.size() != lambda.size() || ou.sigma0_sq.size() != lambda.size()) {
        throw ConfigError("elbo: OU parameters do not match the spectrum");
    }
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        if (ou.sigma_sq[i] != 2.0 * lambda.lambda[i].real() || ou.sigma0_sq[i] != 1.0) {
            throw ConfigError("elbo: OU parameters are not tied to the current spectrum");
        }
    }
    Tape tape;
    const BoundModel bound = bind_model(tape, model, false);
    ElboOptions opts;
    opts.n_samples = n_samples;
    return elbo_loss(tape, bound, model, batch, rng, opts, ForwardOptions{}).report;
}

double map_regularizer(const Model& model, double precision) {
    if (precision == 0.0) return 0.0;
    double acc = 0.0;
    auto add_sq = [&acc](const Tensor& t) {
        for (double v : t.storage()) acc += v * v;
    };
    if (model.variant == Variant::deterministic) {
        for (const auto& l : model.encoder.layers) {
            add_sq(l.weight);
            add_sq(l.bias);
        }
    }
    for (const auto& l : model.decoder.layers) {
        add_sq(l.weight);
        add_sq(l.bias);
    }
    add_sq(model.spectrum_raw);
    if (model.variant == Variant::probabilistic) add_sq(model.decoder.log_noise_var);
    return -0.5 * precision * acc;
}

}  // namespace tsrom
