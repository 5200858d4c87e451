#include "tsrom/latent.hpp"

#include <cmath>
#include <string>

#include "tsrom/errors.hpp"

namespace tsrom {

namespace {

void require_same_size(const LatentState& z, const SpectrumParams& lambda) {
    if (z.size() != lambda.size()) {
        throw DimensionError("latent state has " + std::to_string(z.size()) + " components, spectrum has " +
                             std::to_string(lambda.size()));
    }
}

void require_stationary(const SpectrumParams& lambda) {
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        if (!(lambda.lambda[i].real() > 0.0)) {
            throw StationarityError("Re(lambda_" + std::to_string(i) + ") = " +
                                    std::to_string(lambda.lambda[i].real()) + " must be positive");
        }
    }
}

void require_ou_shape(const SpectrumParams& lambda, const OUParams& ou) {
    if (ou.sigma_sq.size() != lambda.size() || ou.sigma0_sq.size() != lambda.size()) {
        throw DimensionError("OU parameters do not match the spectrum size");
    }
}

double softplus_value(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

double sigmoid(double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

}  // namespace

std::vector<double> SpectrumParams::interleaved() const {
    std::vector<double> out;
    out.reserve(2 * lambda.size());
    for (const auto& l : lambda) {
        out.push_back(l.real());
        out.push_back(l.imag());
    }
    return out;
}

SpectrumParams SpectrumParams::from_interleaved(std::span<const double> values) {
    if (values.size() % 2 != 0) throw DimensionError("interleaved spectrum needs an even length");
    SpectrumParams s;
    for (std::size_t i = 0; i < values.size(); i += 2) s.lambda.emplace_back(values[i], values[i + 1]);
    return s;
}

LatentState propagate(const LatentState& z, const SpectrumParams& lambda, double dt) {
    require_same_size(z, lambda);
    if (!(dt >= 0.0)) throw ParameterError("propagate: dt must be non-negative");
    LatentState out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = propagate_component(z[i], lambda.lambda[i], dt);
    return out;
}

double semigroup_check(const LatentState& z, const SpectrumParams& lambda, double dt1, double dt2) {
    const LatentState chained = propagate(propagate(z, lambda, dt1), lambda, dt2);
    const LatentState direct = propagate(z, lambda, dt1 + dt2);
    double diff = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        diff += std::norm(chained[i] - direct[i]);
        norm += std::norm(direct[i]);
    }
    if (norm == 0.0) return std::sqrt(diff);
    return std::sqrt(diff / norm);
}

OUParams tie_sfa(const SpectrumParams& lambda) {
    require_stationary(lambda);
    OUParams ou;
    ou.tied = true;
    for (const auto& l : lambda.lambda) {
        ou.sigma_sq.push_back(2.0 * l.real());
        ou.sigma0_sq.push_back(1.0);
    }
    return ou;
}

std::vector<Cov2> stationary_covariance(const SpectrumParams& lambda, const OUParams& ou) {
    require_stationary(lambda);
    require_ou_shape(lambda, ou);
    std::vector<Cov2> out;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        const double v = ou.sigma_sq[i] / (4.0 * lambda.lambda[i].real());
        out.push_back({v, 0.0, 0.0, v});
    }
    return out;
}

double propagate_variance(double v0, Complex lambda, double sigma_sq, double dt) {
    const double decay = std::exp(-2.0 * lambda.real() * dt);
    return v0 * decay + (sigma_sq / (2.0 * lambda.real())) * -std::expm1(-2.0 * lambda.real() * dt);
}

TransitionDensity transition_density(const LatentState& z, const SpectrumParams& lambda, const OUParams& ou,
                                     double dt) {
    require_same_size(z, lambda);
    require_ou_shape(lambda, ou);
    require_stationary(lambda);
    if (!(dt > 0.0)) throw ParameterError("transition_density: dt must be positive");
    TransitionDensity d;
    d.mean = propagate(z, lambda, dt);
    for (std::size_t i = 0; i < z.size(); ++i) {
        d.variance.push_back(propagate_variance(0.0, lambda.lambda[i], ou.sigma_sq[i], dt));
    }
    return d;
}

LatentState sample_transition(const TransitionDensity& density, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    LatentState out(density.mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double sd = std::sqrt(0.5 * density.variance[i]);
        const double re = normal(rng);
        const double im = normal(rng);
        out[i] = density.mean[i] + Complex(sd * re, sd * im);
    }
    return out;
}

SpectrumParams init_spectrum(std::size_t components, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> decay(0.1, 1.0);
    std::uniform_real_distribution<double> freq(-2.0, 2.0);
    SpectrumParams s;
    for (std::size_t i = 0; i < components; ++i) {
        const double re = decay(rng);
        const double im = freq(rng);
        s.lambda.emplace_back(re, im);
    }
    return s;
}

Var propagate(Var z, Var lambda, std::span<const double> dts) {
    const std::size_t n = z.rows();
    const std::size_t width = z.cols();
    if (width % 2 != 0 || lambda.cols() != width || lambda.rows() != 1) {
        throw DimensionError("propagate: latent " + z.value().shape_string() + " and spectrum " +
                             lambda.value().shape_string() + " are incompatible");
    }
    if (dts.size() != n) throw DimensionError("propagate: one time gap per latent row is required");
    for (double dt : dts) {
        if (!(dt >= 0.0)) throw ParameterError("propagate: dt must be non-negative");
    }
    const Tensor& zv = z.value();
    const Tensor& lv = lambda.value();
    Tensor out(n, width);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < width; k += 2) {
            const Complex p = propagate_component({zv(r, k), zv(r, k + 1)}, {lv[k], lv[k + 1]}, dts[r]);
            out(r, k) = p.real();
            out(r, k + 1) = p.imag();
        }
    }
    std::vector<double> gaps(dts.begin(), dts.end());
    return z.tape().record(std::move(out), {z, lambda},
                           [z, lambda, gaps = std::move(gaps)](Tape& tp, const Tensor& g, const Tensor& y) {
        const Tensor& lv = lambda.value();
        const std::size_t n = g.rows();
        const std::size_t width = g.cols();
        if (tp.requires_grad(z)) {
            // Adjoint of multiplication by w = exp(-lambda dt) is multiplication by conj(w).
            Tensor gz(n, width);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t k = 0; k < width; k += 2) {
                    const double m = std::exp(-lv[k] * gaps[r]);
                    const double c = std::cos(lv[k + 1] * gaps[r]);
                    const double s = std::sin(lv[k + 1] * gaps[r]);
                    const double gr = g(r, k);
                    const double gi = g(r, k + 1);
                    gz(r, k) = m * (gr * c - gi * s);
                    gz(r, k + 1) = m * (gr * s + gi * c);
                }
            }
            tp.accumulate(z, gz);
        }
        if (tp.requires_grad(lambda)) {
            // d out / d lambda = -dt * out.
            Tensor gl(1, width);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t k = 0; k < width; k += 2) {
                    const double dre = -gaps[r] * y(r, k);
                    const double dim = -gaps[r] * y(r, k + 1);
                    const double gr = g(r, k);
                    const double gi = g(r, k + 1);
                    gl[k] += gr * dre + gi * dim;
                    gl[k + 1] += gi * dre - gr * dim;
                }
            }
            tp.accumulate(lambda, gl);
        }
    });
}

Var positive_spectrum(Var raw) {
    if (raw.rows() != 1 || raw.cols() % 2 != 0) throw DimensionError("positive_spectrum: expects 1 x 2c");
    Tensor out = raw.value();
    for (std::size_t k = 0; k < out.size(); k += 2) out[k] = softplus_value(out[k]) + kSpectrumFloor;
    return raw.tape().record(std::move(out), {raw}, [raw](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor gr = g;
        for (std::size_t k = 0; k < gr.size(); k += 2) gr[k] *= sigmoid(raw.value()[k]);
        tp.accumulate(raw, gr);
    });
}

SpectrumParams positive_spectrum(std::span<const double> raw) {
    std::vector<double> v(raw.begin(), raw.end());
    for (std::size_t k = 0; k < v.size(); k += 2) v[k] = softplus_value(v[k]) + kSpectrumFloor;
    return SpectrumParams::from_interleaved(v);
}

std::vector<double> raw_from_positive_spectrum(const SpectrumParams& lambda) {
    std::vector<double> raw = lambda.interleaved();
    for (std::size_t k = 0; k < raw.size(); k += 2) {
        const double x = raw[k] - kSpectrumFloor;
        if (!(x > 0.0)) throw StationarityError("spectrum real part must exceed the positivity floor");
        // softplus^{-1}(x) = log(expm1(x)), written stably for large x.
        raw[k] = x > 30.0 ? x + std::log(-std::expm1(-x)) : std::log(std::expm1(x));
    }
    return raw;
}

}  // namespace tsrom
