#pragma once

// Complex latent spectrum, the exact linear propagator and the Ornstein-Uhlenbeck
// prior built on it.
//
// Each latent component obeys dz = -lambda z dt (+ sigma dW in the stochastic
// variant). Re(lambda) is a decay rate and Im(lambda) an angular frequency, so
// the flow over dt multiplies z by exp(-Re(lambda) dt) and rotates it by
// -Im(lambda) dt.

#include <array>
#include <complex>
#include <random>
#include <span>
#include <vector>

#include "tsrom/tensor.hpp"

namespace tsrom {

using Complex = std::complex<double>;
using LatentState = std::vector<Complex>;

struct SpectrumParams {
    std::vector<Complex> lambda;

    std::size_t size() const noexcept { return lambda.size(); }
    // Interleaved (re, im) reals, the layout used on the tape.
    std::vector<double> interleaved() const;
    static SpectrumParams from_interleaved(std::span<const double> values);
};

struct OUParams {
    std::vector<double> sigma_sq;   // noise intensity per component
    std::vector<double> sigma0_sq;  // initial complex variance per component
    bool tied = false;
};

// Complex-normal moments of z(t+dt) given z(t). Each real channel carries variance/2.
struct TransitionDensity {
    LatentState mean;
    std::vector<double> variance;
};

// z_i * exp(-lambda_i dt) for a single component. Every propagation in the
// library goes through this function.
inline Complex propagate_component(Complex z, Complex lambda, double dt) {
    const double magnitude = std::exp(-lambda.real() * dt);
    const double c = std::cos(lambda.imag() * dt);
    const double s = std::sin(lambda.imag() * dt);
    return {magnitude * (z.real() * c + z.imag() * s), magnitude * (z.imag() * c - z.real() * s)};
}

LatentState propagate(const LatentState& z, const SpectrumParams& lambda, double dt);

// Relative residual of the flow property: |P(P(z, dt1), dt2) - P(z, dt1 + dt2)| / |P(z, dt1 + dt2)|.
double semigroup_check(const LatentState& z, const SpectrumParams& lambda, double dt1, double dt2);

// SFA tying: sigma_i^2 = 2 Re(lambda_i), sigma0_i^2 = 1. Throws StationarityError if Re(lambda_i) <= 0.
OUParams tie_sfa(const SpectrumParams& lambda);

// Row-major 2x2 covariance of (Re z_i, Im z_i) in the stationary regime.
using Cov2 = std::array<double, 4>;
std::vector<Cov2> stationary_covariance(const SpectrumParams& lambda, const OUParams& ou);

TransitionDensity transition_density(const LatentState& z, const SpectrumParams& lambda, const OUParams& ou,
                                     double dt);

// Complex variance after dt of a component that starts with complex variance v0.
double propagate_variance(double v0, Complex lambda, double sigma_sq, double dt);

LatentState sample_transition(const TransitionDensity& density, std::mt19937_64& rng);

// Default initialisation: Re in [0.1, 1], Im in [-2, 2].
SpectrumParams init_spectrum(std::size_t components, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Tape primitives.

// z: n x 2c interleaved latent rows; lambda: 1 x 2c interleaved; dts: one gap per row.
Var propagate(Var z, Var lambda, std::span<const double> dts);

// Maps raw interleaved parameters to a spectrum with Re = softplus(raw_re) + 1e-6.
Var positive_spectrum(Var raw);

// Inverse of positive_spectrum on the real parts (for initialising raw from a target spectrum).
std::vector<double> raw_from_positive_spectrum(const SpectrumParams& lambda);
SpectrumParams positive_spectrum(std::span<const double> raw);

inline constexpr double kSpectrumFloor = 1e-6;

}  // namespace tsrom
