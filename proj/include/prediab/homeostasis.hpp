#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prediab/data.hpp"

namespace prediab {

/// Parameters of the extended glucose-homeostasis model
///   de/dt = -a3 - (a1 e + a2 w)(e + e_bar) + F(t) - a4 c(t)
///   dw/dt = lambda (e - w)
/// where w is the exponentially weighted memory of e that forms the integral
/// part of the feedback. Units: glucose mg/dL, time minutes, c(t) kcal/min.
struct HomeostasisParams {
    double a1 = 0.0;      // dL/(mg min), proportional feedback
    double a2 = 0.0;      // dL/(mg min), integral feedback
    double lambda = 0.0;  // 1/min, feedback memory rate
    double a3 = 0.0;      // mg/(dL min), basal consumption (nuisance)
    double a4 = 0.0;      // mg/(dL min) per kcal/min, exercise consumption gain

    static constexpr std::size_t kCount = 5;
    static constexpr double kMaxLambda = 1.0;

    std::array<double, kCount> to_array() const { return {a1, a2, lambda, a3, a4}; }
    static HomeostasisParams from_array(const std::array<double, kCount>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }

    /// The homeostasis feature vector [a1, a2, lambda, a4].
    std::array<double, 4> theta_h() const { return {a1, a2, lambda, a4}; }

    bool valid() const {
        for (double v : to_array())
            if (!std::isfinite(v) || v < 0.0) return false;
        return lambda <= kMaxLambda;
    }
};

inline constexpr HomeostasisParams kDefaultInit{1e-4, 3e-4, 0.02, 1e-3, 0.03};
inline constexpr std::size_t kHistoryMinutes = 360;

// ---------------------------------------------------------------------------
// Baseline and local minima
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSmoothingWindow = 15;

/// Centered moving average over unmasked minutes, truncated at the record edges.
inline std::vector<double> moving_average(const UniformGlucoseSeries& s, std::size_t window = kSmoothingWindow) {
    const std::size_t n = s.size();
    const std::size_t half = window / 2;
    std::vector<double> prefix(n + 1, 0.0);
    std::vector<std::size_t> count(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const bool use = !s.gap_mask[i];
        prefix[i + 1] = prefix[i] + (use ? s.values[i] : 0.0);
        count[i + 1] = count[i] + (use ? 1 : 0);
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n, i + half + 1);
        const std::size_t c = count[hi] - count[lo];
        out[i] = c > 0 ? (prefix[hi] - prefix[lo]) / static_cast<double>(c) : s.values[i];
    }
    return out;
}

/// Indices of local minima of the smoothed series: unmasked runs of equal smoothed
/// value strictly below both unmasked neighbors. A flat run reports its middle index.
inline std::vector<std::size_t> local_minima(const UniformGlucoseSeries& s, const std::vector<double>& smoothed) {
    std::vector<std::size_t> out;
    const std::size_t n = s.size();
    std::size_t i = 1;
    while (i + 1 < n) {
        if (s.gap_mask[i] || s.gap_mask[i - 1] || !(smoothed[i] < smoothed[i - 1])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < n && !s.gap_mask[j + 1] && smoothed[j + 1] == smoothed[i]) ++j;
        if (j + 1 < n && !s.gap_mask[j + 1] && smoothed[j + 1] > smoothed[i]) out.push_back((i + j) / 2);
        i = j + 1;
    }
    return out;
}

/// Baseline e_bar: mean smoothed glucose over all local minima; falls back to the
/// mean of unmasked samples when the record has no interior minimum.
inline double baseline_glucose(const UniformGlucoseSeries& s, std::size_t window = kSmoothingWindow) {
    if (s.unmasked_count() < 3) throw InputError("baseline needs at least 3 unmasked glucose samples");
    const auto smoothed = moving_average(s, window);
    const auto minima = local_minima(s, smoothed);
    double sum = 0.0;
    if (!minima.empty()) {
        for (std::size_t i : minima) sum += smoothed[i];
        return sum / static_cast<double>(minima.size());
    }
    std::size_t c = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!s.gap_mask[i]) {
            sum += s.values[i];
            ++c;
        }
    return sum / static_cast<double>(c);
}

// ---------------------------------------------------------------------------
// Postprandial intervals and decay segments
// ---------------------------------------------------------------------------

struct SegmentOptions {
    std::size_t smoothing_window = kSmoothingWindow;
    std::int64_t peak_search_minutes = 120;  // after meal end
    std::size_t min_length_minutes = 20;
    std::size_t history_minutes = kHistoryMinutes;
};

/// Grid interval from the postprandial peak to the next local minimum.
struct PostprandialInterval {
    std::size_t peak;
    std::size_t trough;
};

/// Precomputed minima so that many meals can be scanned against one series.
struct MinimaIndex {
    std::vector<double> smoothed;
    std::vector<std::size_t> minima;

    MinimaIndex(const UniformGlucoseSeries& s, std::size_t window)
        : smoothed(moving_average(s, window)), minima(local_minima(s, smoothed)) {}
};

/// The peak is the glucose maximum within [meal start, meal end + peak_search_minutes];
/// the interval ends at the next local minimum. Returns nothing when the interval is
/// shorter than the minimum length, crosses a gap, or reaches the next meal.
inline std::optional<PostprandialInterval> find_postprandial_interval(const UniformGlucoseSeries& s,
                                                                      const MinimaIndex& mi,
                                                                      const MealEvent& meal,
                                                                      const MealEvent* next_meal,
                                                                      const SegmentOptions& opts = {}) {
    const auto n = static_cast<std::int64_t>(s.size());
    std::int64_t lo = std::max<std::int64_t>(0, grid_index_ceil(s, meal.start));
    std::int64_t hi = std::min<std::int64_t>(n - 1, grid_index_floor(s, meal.end + Minutes{opts.peak_search_minutes}));
    if (lo > hi) return std::nullopt;
    std::optional<std::size_t> peak;
    for (auto i = static_cast<std::size_t>(lo); i <= static_cast<std::size_t>(hi); ++i)
        if (!s.gap_mask[i] && (!peak || s.values[i] > s.values[*peak])) peak = i;
    if (!peak) return std::nullopt;
    auto it = std::upper_bound(mi.minima.begin(), mi.minima.end(), *peak);
    if (it == mi.minima.end()) return std::nullopt;
    const std::size_t trough = *it;
    if (trough - *peak < opts.min_length_minutes) return std::nullopt;
    if (next_meal && next_meal->start <= s.time_at(trough)) return std::nullopt;
    for (std::size_t i = *peak; i <= trough; ++i) {
        if (s.gap_mask[i]) return std::nullopt;
        if (s.values[i] > s.values[*peak]) return std::nullopt;
    }
    return PostprandialInterval{*peak, trough};
}

/// Postprandial decay interval with everything needed to simulate it.
struct DecaySegment {
    std::size_t t0 = 0;             // grid index of the peak
    std::size_t t1 = 0;             // grid index of the trough
    std::vector<double> e_values;   // measured excess glucose over [t0, t1]
    std::vector<double> history;    // excess glucose over [t0 - history, t0]; gaps read as 0
    std::vector<double> c_values;   // consumption c(t) over [t0, t1], kcal/min
};

inline std::vector<DecaySegment> extract_decay_segments(const UniformGlucoseSeries& s, double e_bar,
                                                        const std::vector<MealEvent>& meals,
                                                        std::span<const double> consumption,
                                                        const SegmentOptions& opts = {}) {
    if (consumption.size() != s.size()) throw InputError("consumption series not aligned with glucose grid");
    const MinimaIndex mi(s, opts.smoothing_window);
    std::vector<DecaySegment> out;
    for (std::size_t m = 0; m < meals.size(); ++m) {
        const MealEvent* next = m + 1 < meals.size() ? &meals[m + 1] : nullptr;
        auto iv = find_postprandial_interval(s, mi, meals[m], next, opts);
        if (!iv || iv->peak < opts.history_minutes) continue;
        DecaySegment seg;
        seg.t0 = iv->peak;
        seg.t1 = iv->trough;
        for (std::size_t i = seg.t0; i <= seg.t1; ++i) {
            seg.e_values.push_back(s.values[i] - e_bar);
            seg.c_values.push_back(consumption[i]);
        }
        for (std::size_t i = seg.t0 - opts.history_minutes; i <= seg.t0; ++i)
            seg.history.push_back(s.gap_mask[i] ? 0.0 : s.values[i] - e_bar);
        out.push_back(std::move(seg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feedback memory and simulation
// ---------------------------------------------------------------------------

/// Value at the segment start of the memory integral
///   w(t0) = integral over the history of lambda exp(-lambda (t0 - tau)) e(tau) dtau,
/// with e taken as the linear interpolant of the 1-minute history, integrated exactly
/// minute by minute. `history` ends at t0.
inline double init_feedback_state(std::span<const double> history, double lambda,
                                  std::size_t min_minutes = kHistoryMinutes) {
    if (history.size() < min_minutes + 1)
        throw InputError("feedback history covers " + std::to_string(history.empty() ? 0 : history.size() - 1) +
                         " min, need " + std::to_string(min_minutes));
    const std::size_t m = history.size() - 1;
    // Over one minute ending at distance d before t0, with e rising linearly from a to b:
    //   exp(-lambda d) * [ b (1 - exp(-lambda)) - (b - a) q ],
    //   q = integral_0^1 lambda s exp(-lambda s) ds.
    const double r = std::exp(-lambda);
    const double p = -std::expm1(-lambda);
    const double q = lambda < 1e-6 ? lambda / 2.0 - lambda * lambda / 3.0 : (p - lambda * r) / lambda;
    double weight = 1.0;  // exp(-lambda d)
    double sum = 0.0;
    for (std::size_t k = m; k > 0; --k) {
        const double a = history[k - 1], b = history[k];
        sum += weight * (b * p - (b - a) * q);
        weight *= r;
    }
    return sum;
}

struct SimulatedStates {
    std::vector<double> e;
    std::vector<double> w;
};

/// Classical RK4 at 1-minute steps. `c[k]` and `forcing[k]` are held constant over
/// [k, k+1]. The result has one point per entry of `c`, starting at (e0, w0).
inline SimulatedStates simulate_states(const HomeostasisParams& p, double e_bar, double e0, double w0,
                                       std::span<const double> c, std::span<const double> forcing = {}) {
    if (!p.valid()) throw InputError("homeostasis parameters must be non-negative with lambda <= 1");
    if (!forcing.empty() && forcing.size() != c.size()) throw InputError("forcing not aligned with c(t)");
    const std::size_t n = c.size();
    SimulatedStates out;
    out.e.resize(n);
    out.w.resize(n);
    if (n == 0) return out;
    double e = e0, w = w0;
    out.e[0] = e;
    out.w[0] = w;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double drive = -p.a3 - p.a4 * c[k] + (forcing.empty() ? 0.0 : forcing[k]);
        auto de = [&](double ee, double ww) { return drive - (p.a1 * ee + p.a2 * ww) * (ee + e_bar); };
        auto dw = [&](double ee, double ww) { return p.lambda * (ee - ww); };
        const double k1e = de(e, w), k1w = dw(e, w);
        const double k2e = de(e + 0.5 * k1e, w + 0.5 * k1w), k2w = dw(e + 0.5 * k1e, w + 0.5 * k1w);
        const double k3e = de(e + 0.5 * k2e, w + 0.5 * k2w), k3w = dw(e + 0.5 * k2e, w + 0.5 * k2w);
        const double k4e = de(e + k3e, w + k3w), k4w = dw(e + k3e, w + k3w);
        e += (k1e + 2.0 * k2e + 2.0 * k3e + k4e) / 6.0;
        w += (k1w + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0;
        if (!std::isfinite(e) || !std::isfinite(w) || std::abs(e) > 1e4)
            throw SimulationError(k + 1, "homeostasis state diverged");
        out.e[k + 1] = e;
        out.w[k + 1] = w;
    }
    return out;
}

/// Excess glucose trajectory with no meal forcing (decay segments contain no eating).
inline std::vector<double> simulate(const HomeostasisParams& p, double e_bar, double e0, double w0,
                                    std::span<const double> c) {
    return simulate_states(p, e_bar, e0, w0, c).e;
}

// ---------------------------------------------------------------------------
// Loss and global fit
// ---------------------------------------------------------------------------

/// Pooled mean squared error over every minute of every segment.
inline double loss(const HomeostasisParams& p, std::span<const DecaySegment> segments, double e_bar) {
    if (segments.empty()) throw InputError("loss needs at least one decay segment");
    double sse = 0.0;
    std::size_t count = 0;
    for (const auto& seg : segments) {
        const double w0 = init_feedback_state(seg.history, p.lambda, seg.history.size() - 1);
        const auto sim = simulate(p, e_bar, seg.e_values.front(), w0, seg.c_values);
        for (std::size_t i = 0; i < sim.size(); ++i) {
            const double d = sim[i] - seg.e_values[i];
            sse += d * d;
        }
        count += sim.size();
    }
    return sse / static_cast<double>(count);
}

struct FitOptions {
    int max_iters = 2000;
    double tol = 1e-8;
    HomeostasisParams init = kDefaultInit;
    /// Parameters held at their `init` value when false (order a1, a2, lambda, a3, a4).
    std::array<bool, HomeostasisParams::kCount> free{true, true, true, true, true};
    double fd_step = 1e-4;  // relative, i.e. in log space
    double armijo = 1e-4;
    int max_halvings = 60;
};

struct FitResult {
    HomeostasisParams params;
    double final_loss = 0.0;
    int iterations = 0;
    bool converged = false;
    bool low_data = false;
    std::vector<double> loss_trace;
};

namespace detail {

class LogSpaceObjective {
public:
    LogSpaceObjective(std::span<const DecaySegment> segs, double e_bar, const FitOptions& opts)
        : segs_(segs), e_bar_(e_bar), opts_(opts) {
        for (std::size_t i = 0; i < HomeostasisParams::kCount; ++i)
            if (opts.free[i]) index_.push_back(i);
    }

    std::size_t dim() const { return index_.size(); }

    std::vector<double> initial_point() const {
        const auto v = opts_.init.to_array();
        std::vector<double> x;
        for (std::size_t i : index_) {
            if (!(v[i] > 0.0)) throw FitError("free parameters need a strictly positive initial value");
            x.push_back(std::log(v[i]));
        }
        return x;
    }

    HomeostasisParams params(const std::vector<double>& x) const {
        auto v = opts_.init.to_array();
        for (std::size_t k = 0; k < index_.size(); ++k) v[index_[k]] = std::exp(x[k]);
        return HomeostasisParams::from_array(v);
    }

    double operator()(const std::vector<double>& x) const {
        const auto p = params(x);
        if (!p.valid()) return std::numeric_limits<double>::infinity();
        try {
            const double f = loss(p, segs_, e_bar_);
            return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
        } catch (const SimulationError&) {
            return std::numeric_limits<double>::infinity();
        }
    }

    std::vector<double> gradient(const std::vector<double>& x, double h) const {
        std::vector<double> g(x.size());
        const double f0 = (*this)(x);
        for (std::size_t k = 0; k < x.size(); ++k) {
            auto xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            const double fp = (*this)(xp), fm = (*this)(xm);
            if (std::isfinite(fp) && std::isfinite(fm))
                g[k] = (fp - fm) / (2.0 * h);
            else if (std::isfinite(fm))
                g[k] = (f0 - fm) / h;
            else if (std::isfinite(fp))
                g[k] = (fp - f0) / h;
            else
                g[k] = 0.0;
        }
        return g;
    }

private:
    std::span<const DecaySegment> segs_;
    double e_bar_;
    const FitOptions& opts_;
    std::vector<size_t> index_;
};

}  // namespace detail

/// Central finite-difference gradient of the loss with respect to the log of each free parameter.
inline std::vector<double> loss_log_gradient(const HomeostasisParams& at, std::span<const DecaySegment> segments,
                                             double e_bar, double h = 1e-4) {
    FitOptions opts;
    opts.init = at;
    detail::LogSpaceObjective obj(segments, e_bar, opts);
    return obj.gradient(obj.initial_point(), h);
}

/// Joint gradient descent over all segments in log-parameter space with backtracking
/// (Armijo) line search starting from a unit step.
inline FitResult fit_global(std::span<const DecaySegment> segments, double e_bar, const FitOptions& opts = {}) {
    if (segments.empty()) throw FitError("no decay segments to fit");
    detail::LogSpaceObjective obj(segments, e_bar, opts);
    auto x = obj.initial_point();
    double f = obj(x);
    if (!std::isfinite(f)) throw FitError("loss is not finite at the initial parameters");

    FitResult r;
    r.low_data = segments.size() < 3;
    r.loss_trace.push_back(f);
    for (int it = 0; it < opts.max_iters; ++it) {
        const auto g = obj.gradient(x, opts.fd_step);
        double g2 = 0.0;
        for (double v : g) g2 += v * v;
        if (g2 == 0.0) {
            r.converged = true;
            break;
        }
        double t = 1.0;
        bool accepted = false;
        std::vector<double> xn(x.size());
        double fn = f;
        for (int k = 0; k <= opts.max_halvings; ++k, t *= 0.5) {
            for (std::size_t i = 0; i < x.size(); ++i) xn[i] = x[i] - t * g[i];
            fn = obj(xn);
            if (fn <= f - opts.armijo * t * g2) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (it == 0) throw FitError("line search failed at the first iteration (bad initialization)");
            break;
        }
        const double rel = (f - fn) / std::max(std::abs(f), std::numeric_limits<double>::min());
        x = xn;
        f = fn;
        r.loss_trace.push_back(f);
        r.iterations = it + 1;
        if (rel < opts.tol) {
            r.converged = true;
            break;
        }
    }
    if (r.iterations == 0) {
        r.params = opts.init;  // exactly, not through the log round trip
        r.final_loss = loss(opts.init, segments, e_bar);
    } else {
        r.params = obj.params(x);
        r.final_loss = f;
    }
    return r;
}

/// Comparison mode for the original three-parameter model: each segment is fitted on
/// its own with a4 frozen at zero.
inline std::vector<FitResult> fit_per_peak(std::span<const DecaySegment> segments, double e_bar,
                                           FitOptions opts = {}) {
    opts.init.a4 = 0.0;
    opts.free[4] = false;
    std::vector<FitResult> out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        try {
            out.push_back(fit_global(segments.subspan(i, 1), e_bar, opts));
        } catch (const FitError&) {
            // a peak the optimizer cannot move from the initialization contributes nothing
        }
    }
    return out;
}

}  // namespace prediab
