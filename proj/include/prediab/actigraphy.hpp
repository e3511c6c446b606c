#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prediab/butterworth.hpp"
#include "prediab/data.hpp"

namespace prediab {

inline constexpr double kBandLowHz = 0.5;
inline constexpr double kBandHighHz = 1.5;
inline constexpr int kBandpassOrder = 4;
inline constexpr double kDefaultCountsPerG = 10000.0;
inline constexpr double kMinutesPerDay = 1440.0;

/// Band-passed acceleration magnitude at the stream's native rate.
struct FilteredSignal {
    std::int64_t start_ms = 0;
    int sample_rate_hz = 0;
    std::vector<double> values;
};

/// Activity counts a(t) per 1-minute epoch.
struct CountsSeries {
    Instant start{};
    std::vector<double> counts;
};

struct MetSeries {
    Instant start{};
    std::vector<double> met;
};

/// Glucose-consumption drive c(t) = R * m(t), kcal/min.
struct ConsumptionSeries {
    Instant start{};
    std::vector<double> rate;
};

inline dsp::SosFilter activity_bandpass(int sample_rate_hz) {
    return dsp::butterworth_bandpass(kBandpassOrder, kBandLowHz, kBandHighHz, static_cast<double>(sample_rate_hz));
}

/// Vector magnitude followed by a zero-phase 0.5-1.5 Hz Butterworth band-pass.
inline FilteredSignal bandpass_magnitude(const AccelStream& stream) {
    if (stream.sample_rate_hz < 4)
        throw InputError("sample rate " + std::to_string(stream.sample_rate_hz) + " Hz too low for the 0.5-1.5 Hz band");
    if (stream.samples.size() < 2) throw InputError("accelerometer stream too short to filter");
    std::vector<double> mag(stream.samples.size());
    for (std::size_t i = 0; i < mag.size(); ++i) {
        const auto& s = stream.samples[i];
        mag[i] = std::sqrt(s.x * s.x + s.y * s.y + s.z * s.z);
    }
    FilteredSignal out;
    out.start_ms = stream.start_ms;
    out.sample_rate_hz = stream.sample_rate_hz;
    out.values = dsp::filtfilt(activity_bandpass(stream.sample_rate_hz), mag);
    return out;
}

/// counts = k_counts * mean(|filtered|) per full minute; a trailing partial epoch is dropped.
inline CountsSeries activity_counts(const FilteredSignal& filtered, double k_counts = kDefaultCountsPerG) {
    if (filtered.values.empty()) throw InputError("empty filtered signal");
    const std::size_t epoch = static_cast<std::size_t>(filtered.sample_rate_hz) * 60;
    const std::size_t n_epochs = filtered.values.size() / epoch;
    if (n_epochs == 0) throw InputError("signal shorter than one 1-minute epoch");
    CountsSeries out;
    out.start = from_unix_ms(filtered.start_ms);
    out.counts.resize(n_epochs);
    for (std::size_t e = 0; e < n_epochs; ++e) {
        double sum = 0.0;
        for (std::size_t i = e * epoch; i < (e + 1) * epoch; ++i) sum += std::abs(filtered.values[i]);
        out.counts[e] = k_counts * sum / static_cast<double>(epoch);
    }
    return out;
}

/// Counts re-indexed onto a minute grid starting at `grid_start`; minutes outside the
/// accelerometer recording read as zero activity.
inline std::vector<double> align_counts(const CountsSeries& counts, Instant grid_start, std::size_t n) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int64_t d = seconds_between(counts.start, grid_start + Seconds{60 * static_cast<std::int64_t>(i)});
        if (d < 0) continue;
        const auto e = static_cast<std::size_t>(d / 60);
        if (e < counts.counts.size()) out[i] = counts.counts[e];
    }
    return out;
}

/// Piecewise counts-to-MET map. Discontinuous at 1200 counts/min.
inline double met_from_counts(double a) {
    if (a < 50.0) return 1.0;
    if (a <= 350.0) return 1.83;
    if (a < 1200.0) return 1.935 + 0.003002 * a;
    return 2.768 + 0.0006397 * a;
}

/// Harris-Benedict basal metabolic rate, kcal/day.
inline double bmr(const Biometrics& b) {
    if (b.gender == Gender::male)
        return 66.473 + 13.752 * b.weight_kg + 5.003 * b.height_cm - 6.755 * b.age_years;
    return 665.096 + 9.563 * b.weight_kg + 1.85 * b.height_cm - 4.676 * b.age_years;
}

inline MetSeries met_series(const CountsSeries& counts) {
    MetSeries m{counts.start, {}};
    m.met.reserve(counts.counts.size());
    for (double a : counts.counts) m.met.push_back(met_from_counts(a));
    return m;
}

inline std::vector<double> consumption_rate(std::span<const double> counts, double bmr_kcal_per_day) {
    const double r = bmr_kcal_per_day / kMinutesPerDay;
    std::vector<double> c(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) c[i] = r * met_from_counts(counts[i]);
    return c;
}

inline ConsumptionSeries consumption_rate(const CountsSeries& counts, const Biometrics& b) {
    return {counts.start, consumption_rate(counts.counts, bmr(b))};
}

inline std::string write_counts_csv(const CountsSeries& counts) {
    std::string out = "t_iso,counts_per_min\n";
    for (std::size_t i = 0; i < counts.counts.size(); ++i) {
        out += format_iso8601(counts.start + Seconds{60 * static_cast<std::int64_t>(i)});
        out += ',';
        out += format_double(counts.counts[i]);
        out += '\n';
    }
    return out;
}

}  // namespace prediab
