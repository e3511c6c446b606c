#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prediab/data.hpp"
#include "prediab/error.hpp"
#include "prediab/homeostasis.hpp"
#include "prediab/rng.hpp"

namespace prediab {

inline constexpr std::int64_t kFastingMinMinutes = 8 * 60;
inline constexpr double kFastingMaxMaskedFraction = 0.10;
inline constexpr double kNpggMinCountSlope = 1.0;  // counts/min^2
inline constexpr std::size_t kNpggMinValidMinutes = 5;
inline constexpr std::size_t kDefaultBootstrap = 1000;

/// Inter-meal interval of the glucose grid, both ends inclusive.
struct FastingWindow {
    std::size_t start = 0;  // first grid minute at or after the end of the last meal
    std::size_t end = 0;    // last grid minute at or before the start of the next meal

    bool operator==(const FastingWindow&) const = default;
};

struct FastingStats {
    double mu_g = 0.0;
    double sigma_g = 0.0;
    std::optional<double> mu_fg;  // absent when nothing unmasked follows the first 8 h
};

/// Per-participant curve features: the four bootstrap-aggregated means.
struct CurveFeatures {
    double mu_g = 0.0;
    double sigma_g = 0.0;
    double mu_fg = 0.0;
    double mu_npgg = 0.0;
};

/// Windows strictly longer than 8 h between consecutive meals, lying inside the glucose
/// record, with at most 10% of their minutes gap-masked. Record edges never qualify.
inline std::vector<FastingWindow> detect_fasting_windows(const std::vector<MealEvent>& meals,
                                                         const UniformGlucoseSeries& series) {
    std::vector<FastingWindow> out;
    const auto n = static_cast<std::int64_t>(series.size());
    for (std::size_t m = 0; m + 1 < meals.size(); ++m) {
        const Instant from = meals[m].end;
        const Instant to = meals[m + 1].start;
        if (seconds_between(from, to) <= kFastingMinMinutes * 60) continue;
        const std::int64_t lo = grid_index_ceil(series, from);
        const std::int64_t hi = grid_index_floor(series, to);
        if (lo < 0 || hi >= n || lo > hi) continue;
        std::size_t masked = 0;
        for (auto i = lo; i <= hi; ++i) masked += series.gap_mask[static_cast<std::size_t>(i)] ? 1 : 0;
        const double minutes = static_cast<double>(hi - lo + 1);
        if (static_cast<double>(masked) > kFastingMaxMaskedFraction * minutes) continue;
        out.push_back({static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)});
    }
    return out;
}

/// Mean and population standard deviation over the unmasked minutes of the window, and
/// the fasting-glucose surrogate: the mean from 8 h after its start to its end.
inline FastingStats fasting_stats(const UniformGlucoseSeries& series, const FastingWindow& w) {
    if (w.end >= series.size() || w.start > w.end) throw InputError("fasting window outside the glucose record");
    double sum = 0.0, sum_late = 0.0;
    std::size_t count = 0, count_late = 0;
    const std::size_t late_from = w.start + static_cast<std::size_t>(kFastingMinMinutes);
    for (std::size_t i = w.start; i <= w.end; ++i) {
        if (series.gap_mask[i]) continue;
        sum += series.values[i];
        ++count;
        if (i >= late_from) {
            sum_late += series.values[i];
            ++count_late;
        }
    }
    if (count == 0) throw InputError("fasting window has no unmasked glucose");
    FastingStats s;
    s.mu_g = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = w.start; i <= w.end; ++i)
        if (!series.gap_mask[i]) ss += (series.values[i] - s.mu_g) * (series.values[i] - s.mu_g);
    s.sigma_g = std::sqrt(ss / static_cast<double>(count));
    if (count_late > 0) s.mu_fg = sum_late / static_cast<double>(count_late);
    return s;
}

enum class NpggStatus { ok, no_interval, too_few_minutes };

struct NpggOutcome {
    NpggStatus status = NpggStatus::no_interval;
    double value = 0.0;      // meaningful only when status == ok
    std::size_t valid = 0;   // minutes that passed the activity-slope gate

    bool ok() const { return status == NpggStatus::ok; }
};

/// Mean ratio of forward differences de/da over minutes t in [t1, t2), skipping minutes
/// where |da| < kNpggMinCountSlope. `excess` and `counts` share the 1-minute grid.
inline NpggOutcome npgg_on_interval(std::span<const double> excess, std::span<const double> counts,
                                    std::size_t t1, std::size_t t2) {
    if (excess.size() != counts.size()) throw InputError("glucose and counts grids differ in length");
    if (t2 >= excess.size() || t1 >= t2) return {NpggStatus::no_interval, 0.0, 0};
    double sum = 0.0;
    std::size_t valid = 0;
    for (std::size_t t = t1; t < t2; ++t) {
        const double da = counts[t + 1] - counts[t];
        if (std::abs(da) < kNpggMinCountSlope) continue;
        sum += (excess[t + 1] - excess[t]) / da;
        ++valid;
    }
    if (valid < kNpggMinValidMinutes) return {NpggStatus::too_few_minutes, 0.0, valid};
    return {NpggStatus::ok, sum / static_cast<double>(valid), valid};
}

/// NPGG for one meal over its peak-to-next-minimum interval. `counts` is aligned to the
/// glucose grid (see align_counts).
inline NpggOutcome npgg(const UniformGlucoseSeries& series, std::span<const double> counts, const MinimaIndex& minima,
                        const MealEvent& meal, const MealEvent* next_meal, double e_bar,
                        const SegmentOptions& opts = {}) {
    if (counts.size() != series.size()) throw InputError("counts not aligned with glucose grid");
    const auto iv = find_postprandial_interval(series, minima, meal, next_meal, opts);
    if (!iv) return {NpggStatus::no_interval, 0.0, 0};
    std::vector<double> excess(series.size());
    for (std::size_t i = iv->peak; i <= iv->trough; ++i) excess[i] = series.values[i] - e_bar;
    return npgg_on_interval(excess, counts, iv->peak, iv->trough);
}

/// Mean of B bootstrap resample means; B = 0 returns the plain sample mean, and a single
/// value is returned as is.
inline double bootstrap_mean(std::span<const double> values, std::size_t B, std::uint64_t seed) {
    if (values.empty()) throw InputError("bootstrap of an empty sample");
    const std::size_t n = values.size();
    if (n == 1) return values.front();
    if (B == 0) {
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(n);
    }
    Rng rng(seed);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += values[rng.index(n)];
        total += s / static_cast<double>(n);
    }
    return total / static_cast<double>(B);
}

/// Every per-interval occurrence of the curve features found in one record.
struct CurveOccurrences {
    std::vector<FastingWindow> windows;
    std::vector<double> mu_g, sigma_g, mu_fg, npgg;
    std::size_t meals_without_npgg = 0;
};

inline CurveOccurrences collect_curve_occurrences(const UniformGlucoseSeries& series, const std::vector<MealEvent>& meals,
                                                  std::span<const double> counts, double e_bar,
                                                  const SegmentOptions& opts = {}) {
    CurveOccurrences occ;
    occ.windows = detect_fasting_windows(meals, series);
    for (const auto& w : occ.windows) {
        const auto s = fasting_stats(series, w);
        occ.mu_g.push_back(s.mu_g);
        occ.sigma_g.push_back(s.sigma_g);
        if (s.mu_fg) occ.mu_fg.push_back(*s.mu_fg);
    }
    const MinimaIndex minima(series, opts.smoothing_window);
    for (std::size_t m = 0; m < meals.size(); ++m) {
        const MealEvent* next = m + 1 < meals.size() ? &meals[m + 1] : nullptr;
        const auto r = npgg(series, counts, minima, meals[m], next, e_bar, opts);
        if (r.ok())
            occ.npgg.push_back(r.value);
        else
            ++occ.meals_without_npgg;
    }
    return occ;
}

/// Aggregates occurrences into the feature vector. Each feature draws its own stream
/// derived from (seed, participant id, feature index), so the result does not depend on
/// the order in which participants or features are processed.
inline CurveFeatures theta_c(const CurveOccurrences& occ, std::size_t B, std::uint64_t seed,
                             const std::string& participant_id) {
    if (occ.mu_g.empty()) throw IncompleteFeaturesError(participant_id + ": no fasting window longer than 8 h");
    if (occ.mu_fg.empty()) throw IncompleteFeaturesError(participant_id + ": no fasting window with glucose after 8 h");
    if (occ.npgg.empty()) throw IncompleteFeaturesError(participant_id + ": no meal with a valid NPGG interval");
    auto agg = [&](const std::vector<double>& v, std::uint64_t feature) {
        return bootstrap_mean(v, B, derive_seed(seed, participant_id, feature));
    };
    return {agg(occ.mu_g, 0), agg(occ.sigma_g, 1), agg(occ.mu_fg, 2), agg(occ.npgg, 3)};
}

inline CurveFeatures theta_c(const ParticipantRecord& record, std::span<const double> counts, double e_bar,
                             std::size_t B, std::uint64_t seed) {
    return theta_c(collect_curve_occurrences(record.glucose, record.meals, counts, e_bar), B, seed, record.id);
}

}  // namespace prediab
