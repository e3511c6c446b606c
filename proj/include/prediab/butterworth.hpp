#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace prediab::dsp {

/// Second-order section, transposed direct form II, a0 normalized to 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Cascade of biquads.
struct SosFilter {
    std::vector<Biquad> sections;

    /// Complex frequency response at `f_hz` for sample rate `fs_hz`.
    std::complex<double> response(double f_hz, double fs_hz) const {
        const std::complex<double> zinv = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / fs_hz);
        std::complex<double> h{1.0, 0.0};
        for (const auto& s : sections) {
            auto num = s.b0 + zinv * (s.b1 + zinv * s.b2);
            auto den = 1.0 + zinv * (s.a1 + zinv * s.a2);
            h *= num / den;
        }
        return h;
    }
};

/// Butterworth band-pass of prototype order `order` (the cascade has 2*order poles),
/// designed by bilinear transform with pre-warped band edges.
inline SosFilter butterworth_bandpass(int order, double f_lo, double f_hi, double fs) {
    if (order < 1) throw std::invalid_argument("filter order must be positive");
    if (!(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0))
        throw std::invalid_argument("band edges must satisfy 0 < f_lo < f_hi < fs/2");
    using cplx = std::complex<double>;
    const double pi = std::numbers::pi;
    const double fs2 = 2.0 * fs;
    const double w_lo = fs2 * std::tan(pi * f_lo / fs);
    const double w_hi = fs2 * std::tan(pi * f_hi / fs);
    const double bw = w_hi - w_lo;
    const double w0 = std::sqrt(w_lo * w_hi);

    std::vector<cplx> analog;
    for (int m = -order + 1; m < order; m += 2) {
        const cplx p = -std::exp(cplx{0.0, pi * m / (2.0 * order)});
        const cplx half = p * (bw / 2.0);
        const cplx d = std::sqrt(half * half - w0 * w0);
        analog.push_back(half + d);
        analog.push_back(half - d);
    }

    // Digital gain: bw^N * prod(fs2 - 0)^N / prod(fs2 - p).
    cplx gain{std::pow(bw, order) * std::pow(fs2, order), 0.0};
    std::vector<cplx> poles;
    for (const auto& s : analog) {
        gain /= (fs2 - s);
        poles.push_back((fs2 + s) / (fs2 - s));
    }

    std::vector<cplx> upper;
    std::vector<double> real_poles;
    for (const auto& z : poles) {
        if (z.imag() > 1e-14)
            upper.push_back(z);
        else if (std::abs(z.imag()) <= 1e-14)
            real_poles.push_back(z.real());
    }
    std::sort(real_poles.begin(), real_poles.end());

    SosFilter f;
    for (const auto& z : upper) f.sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
    for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2)
        f.sections.push_back({1.0, 0.0, -1.0, -(real_poles[i] + real_poles[i + 1]), real_poles[i] * real_poles[i + 1]});
    if (f.sections.size() != static_cast<std::size_t>(order)) throw std::logic_error("unexpected pole layout");
    f.sections.front().b0 *= gain.real();
    f.sections.front().b1 *= gain.real();
    f.sections.front().b2 *= gain.real();
    return f;
}

/// Per-section states for a unit-step steady state (so a constant input passes with no transient).
inline std::vector<std::array<double, 2>> steady_state_init(const SosFilter& f) {
    std::vector<std::array<double, 2>> zi;
    double scale = 1.0;
    for (const auto& s : f.sections) {
        const double g = s.dc_gain();
        const double z2 = s.b2 - s.a2 * g;
        const double z1 = s.b1 - s.a1 * g + z2;
        zi.push_back({scale * z1, scale * z2});
        scale *= g;
    }
    return zi;
}

/// Causal filtering in place, starting from `zi` scaled by `x0`.
inline void sosfilt_inplace(const SosFilter& f, std::span<double> x, const std::vector<std::array<double, 2>>& zi,
                            double x0) {
    for (std::size_t k = 0; k < f.sections.size(); ++k) {
        const auto& s = f.sections[k];
        double z1 = zi[k][0] * x0, z2 = zi[k][1] * x0;
        for (double& v : x) {
            const double in = v;
            const double y = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * y + z2;
            z2 = s.b2 * in - s.a2 * y;
            v = y;
        }
    }
}

/// Zero-phase forward-backward filtering with odd extension at both ends.
inline std::vector<double> filtfilt(const SosFilter& f, std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("filtfilt needs at least 2 samples");
    const std::size_t pad = std::min<std::size_t>(3 * (2 * f.sections.size() + 1), n - 1);

    std::vector<double> ext(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
    std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
    for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

    const auto zi = steady_state_init(f);
    sosfilt_inplace(f, ext, zi, ext.front());
    std::reverse(ext.begin(), ext.end());
    sosfilt_inplace(f, ext, zi, ext.front());
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

}  // namespace prediab::dsp
