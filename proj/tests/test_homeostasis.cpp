#include "catch_amalgamated.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "oracles/volterra_reference.hpp"
#include "prediab/homeostasis.hpp"

using namespace prediab;
using Catch::Approx;

namespace {

const Instant kT0 = parse_iso8601("2023-06-01T00:00:00Z");

UniformGlucoseSeries series_of(std::vector<double> v) {
    UniformGlucoseSeries s;
    s.start = kT0;
    s.gap_mask.assign(v.size(), false);
    s.values = std::move(v);
    return s;
}

MealEvent meal_at(std::int64_t start_min, std::int64_t end_min) {
    return {kT0 + Minutes{start_min}, kT0 + Minutes{end_min}, std::nullopt};
}

oracle::ModelParams as_oracle(const HomeostasisParams& p) { return {p.a1, p.a2, p.lambda, p.a3, p.a4}; }

/// Smooth positive drive: a couple of slow sinusoids.
std::vector<double> smooth_drive(std::mt19937_64& gen, std::size_t n, double base, double amp) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double p1 = 60 + 120 * u(gen), p2 = 20 + 40 * u(gen), ph = 6.28 * u(gen);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i);
        c[i] = base + amp * (0.6 * std::sin(2 * std::numbers::pi * t / p1 + ph) + 0.4 * std::sin(2 * std::numbers::pi * t / p2));
    }
    return c;
}

/// A rise-then-fall bump of height h centered at `peak` over a flat baseline.
std::vector<double> bump_trace(std::size_t n, double base, std::size_t peak, double h, double rise, double fall) {
    std::vector<double> v(n, base);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(peak);
        if (d <= 0 && d > -rise) v[i] = base + h * (1.0 + d / rise);
        if (d > 0 && d < fall) v[i] = base + h * 0.5 * (1.0 + std::cos(std::numbers::pi * d / fall));
    }
    return v;
}

}  // namespace

TEST_CASE("baseline is the mean of local minima", "[homeostasis]") {
    const auto s = series_of({100, 90, 100, 95, 100});
    CHECK(baseline_glucose(s, 1) == Approx(92.5));
    CHECK(local_minima(s, moving_average(s, 1)) == std::vector<std::size_t>{1, 3});
}

TEST_CASE("monotone record falls back to the mean", "[homeostasis]") {
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) v.push_back(80.0 + 0.5 * i);
    CHECK(baseline_glucose(series_of(v)) == Approx(80.0 + 0.5 * 49.5));
}

TEST_CASE("baseline of a sinusoid sits at its troughs", "[homeostasis]") {
    std::vector<double> v(48 * 60);
    for (std::size_t t = 0; t < v.size(); ++t) v[t] = 100.0 + 10.0 * std::sin(2 * std::numbers::pi * static_cast<double>(t) / 240.0);
    CHECK(baseline_glucose(series_of(v)) == Approx(90.0).margin(0.5));
}

TEST_CASE("flat-bottomed minimum is found once", "[homeostasis]") {
    const auto s = series_of({100, 95, 90, 90, 90, 95, 100});
    CHECK(local_minima(s, moving_average(s, 1)) == std::vector<std::size_t>{3});
}

TEST_CASE("masked minutes take no part in the baseline", "[homeostasis]") {
    auto s = series_of({100, 90, 100, 40, 100, 95, 100});
    s.gap_mask[3] = true;
    CHECK(baseline_glucose(s, 1) == Approx(92.5));
}

TEST_CASE("a clean bump yields one segment from apex to trough", "[homeostasis]") {
    const std::size_t peak = 500;
    auto v = bump_trace(900, 90.0, peak, 40.0, 30.0, 120.0);
    v[peak + 130] = 89.0;  // trailing trough
    const auto s = series_of(v);
    const std::vector<double> c(s.size(), 1.2);
    const auto segs = extract_decay_segments(s, 90.0, {meal_at(470, 490)}, c, {.smoothing_window = 1});
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].t0 == peak);
    CHECK(segs[0].t1 == peak + 130);
    CHECK(segs[0].e_values.front() == Approx(40.0));
    CHECK(segs[0].e_values.back() == Approx(-1.0));
    CHECK(segs[0].history.size() == kHistoryMinutes + 1);
    CHECK(segs[0].c_values.size() == segs[0].e_values.size());
}

TEST_CASE("a meal inside the decay discards the segment", "[homeostasis]") {
    const std::size_t peak = 500;
    auto v = bump_trace(900, 90.0, peak, 40.0, 30.0, 120.0);
    v[peak + 130] = 89.0;
    const auto s = series_of(v);
    const std::vector<double> c(s.size(), 1.2);
    const auto segs = extract_decay_segments(s, 90.0, {meal_at(470, 490), meal_at(515, 530)}, c, {.smoothing_window = 1});
    for (const auto& seg : segs) CHECK(seg.t0 != peak);
}

TEST_CASE("segment needs six hours of history", "[homeostasis]") {
    auto v = bump_trace(600, 90.0, 200, 40.0, 30.0, 120.0);
    v[330] = 89.0;
    const auto s = series_of(v);
    const std::vector<double> c(s.size(), 1.2);
    CHECK(extract_decay_segments(s, 90.0, {meal_at(170, 190)}, c, {.smoothing_window = 1}).empty());
}

TEST_CASE("segment bounds match the forward model's apex and trough", "[homeostasis]") {
    const HomeostasisParams p{6e-5, 3.5e-4, 0.016, 0.003, 0.06};
    const double e_bar = 90.0;
    const std::size_t n = 1200, meal_start = 600, meal_len = 20;
    std::vector<double> c(n, 1.2), forcing(n, 0.0);
    for (std::size_t k = meal_start; k < meal_start + meal_len; ++k) forcing[k] = 90.0 / meal_len;
    for (std::size_t k = meal_start + 60; k < meal_start + 90; ++k) c[k] = 4.0;  // a walk during the decay
    std::vector<double> rest(1440, 1.2);
    const auto burn = simulate_states(p, e_bar, 0.0, 0.0, rest);
    const auto e = simulate_states(p, e_bar, burn.e.back(), burn.w.back(), c, forcing).e;

    std::size_t apex = meal_start;
    for (std::size_t i = meal_start; i < n; ++i)
        if (e[i] > e[apex]) apex = i;
    std::size_t trough = apex;
    while (trough + 1 < n && e[trough + 1] < e[trough]) ++trough;

    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = e[i] + e_bar;
    const auto segs = extract_decay_segments(series_of(g), e_bar, {meal_at(meal_start, meal_start + meal_len)}, c);
    REQUIRE(segs.size() == 1);
    CHECK(std::abs(static_cast<long>(segs[0].t0) - static_cast<long>(apex)) <= 2);
    CHECK(std::abs(static_cast<long>(segs[0].t1) - static_cast<long>(trough)) <= 2);
}

TEST_CASE("feedback memory of a zero history is zero", "[homeostasis]") {
    CHECK(init_feedback_state(std::vector<double>(361, 0.0), 0.02) == 0.0);
    CHECK_THROWS_AS(init_feedback_state(std::vector<double>(100, 1.0), 0.02), InputError);
}

TEST_CASE("feedback memory of a constant history", "[homeostasis]") {
    const double E = 37.0, T = 360.0;
    for (double lambda : {0.005, 0.02, 0.1}) {
        const double w0 = init_feedback_state(std::vector<double>(361, E), lambda);
        CHECK(w0 == Approx(E * (1.0 - std::exp(-lambda * T))).epsilon(1e-3));
    }
}

TEST_CASE("feedback memory matches fine quadrature of the interpolated history", "[homeostasis]") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 100.0), ul(0.003, 0.08);
    for (int draw = 0; draw < 10; ++draw) {
        std::vector<double> h(361);
        double x = 50.0;
        for (auto& v : h) v = x = std::clamp(x + (u(gen) - 50.0) * 0.1, 0.0, 100.0);
        const double lambda = ul(gen);
        // Midpoint rule with 200 sub-intervals per minute on the linear interpolant.
        double ref = 0.0;
        const int sub = 200;
        for (std::size_t k = 0; k + 1 < h.size(); ++k)
            for (int j = 0; j < sub; ++j) {
                const double f = (j + 0.5) / sub;
                const double tau = static_cast<double>(k) + f;
                ref += lambda * std::exp(-lambda * (360.0 - tau)) * (h[k] + f * (h[k + 1] - h[k])) / sub;
            }
        CHECK(init_feedback_state(h, lambda) == Approx(ref).epsilon(1e-4));
    }
}

TEST_CASE("zero parameters leave e unchanged", "[homeostasis]") {
    const auto e = simulate({}, 90.0, 25.0, 3.0, std::vector<double>(100, 2.0));
    for (double v : e) CHECK(v == 25.0);
}

TEST_CASE("proportional-only decay is exponential near baseline", "[homeostasis]") {
    const double a1 = 1e-4, e_bar = 100.0, e0 = 2.0;
    const double tau = 1.0 / (a1 * e_bar);
    const auto n = static_cast<std::size_t>(tau) + 1;
    const std::vector<double> c(n, 1.0);
    const auto e = simulate({a1, 0, 0.01, 0, 0}, e_bar, e0, 0.0, c);
    const auto ref = oracle::solve_volterra({a1, 0, 0.01, 0, 0}, e_bar, e0, 0.0, c, {});
    for (std::size_t t = 0; t < n; ++t) {
        CHECK(e[t] == Approx(e0 * std::exp(-a1 * e_bar * static_cast<double>(t))).epsilon(0.02));
        CHECK(e[t] == Approx(ref[t]).epsilon(1e-6));
    }
}

TEST_CASE("state-space simulation matches the integral form", "[homeostasis]") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int draw = 0; draw < 4; ++draw) {
        const HomeostasisParams p{2e-5 + 1e-4 * u(gen), 1e-4 + 5e-4 * u(gen), 0.005 + 0.05 * u(gen), 0.005 * u(gen), 0.1 * u(gen)};
        const double e_bar = 80 + 25 * u(gen), e0 = 20 + 60 * u(gen), w0 = 20 * u(gen);
        const auto c = smooth_drive(gen, 180, 2.0, 1.0);
        const auto F = smooth_drive(gen, 180, 0.5, 0.5);
        const auto e = simulate_states(p, e_bar, e0, w0, c, F).e;
        const auto ref = oracle::solve_volterra(as_oracle(p), e_bar, e0, w0, c, F);
        for (std::size_t t = 0; t < e.size(); ++t) CHECK(std::abs(e[t] - ref[t]) <= 1e-5 * std::max(std::abs(ref[t]), 1.0));
    }
}

TEST_CASE("halving the integration step barely moves the solution", "[homeostasis]") {
    // Integrating in half-minute steps equals integrating a time-stretched system whose
    // rates are halved, with each minute's inputs repeated twice.
    std::mt19937_64 gen(9);
    const HomeostasisParams p{6e-5, 3e-4, 0.02, 0.003, 0.06};
    const auto c = smooth_drive(gen, 240, 2.0, 1.5);
    const auto F = smooth_drive(gen, 240, 1.0, 1.0);
    const auto coarse = simulate_states(p, 90.0, 60.0, 10.0, c, F).e;
    std::vector<double> c2, F2;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int k = 0; k < 2; ++k) {
            c2.push_back(c[i]);
            F2.push_back(0.5 * F[i]);
        }
    c2.pop_back();
    F2.pop_back();
    const HomeostasisParams half{p.a1 / 2, p.a2 / 2, p.lambda / 2, p.a3 / 2, p.a4 / 2};
    const auto fine = simulate_states(half, 90.0, 60.0, 10.0, c2, F2).e;
    double sup = 0.0;
    for (std::size_t t = 0; t < coarse.size(); ++t) sup = std::max(sup, std::abs(coarse[t] - fine[2 * t]));
    CHECK(sup < 1e-3);
}

TEST_CASE("invalid parameters are rejected", "[homeostasis]") {
    CHECK_THROWS_AS(simulate({-1e-4, 0, 0, 0, 0}, 90, 10, 0, std::vector<double>(3, 1.0)), InputError);
    CHECK_THROWS_AS(simulate({0, 0, 2.0, 0, 0}, 90, 10, 0, std::vector<double>(3, 1.0)), InputError);
}

namespace {

/// Segment whose measurements are exactly the model's own output.
DecaySegment model_segment(const HomeostasisParams& p, double e_bar, double e0, std::size_t len, std::mt19937_64& gen) {
    DecaySegment s;
    std::uniform_real_distribution<double> u(0.0, 30.0);
    for (std::size_t i = 0; i <= kHistoryMinutes; ++i) s.history.push_back(u(gen));
    s.history.back() = e0;
    s.c_values = smooth_drive(gen, len, 2.0, 1.0);
    s.e_values = simulate(p, e_bar, e0, init_feedback_state(s.history, p.lambda), s.c_values);
    s.t0 = 1000;
    s.t1 = 1000 + len - 1;
    return s;
}

}  // namespace

TEST_CASE("loss vanishes at the generating parameters", "[homeostasis]") {
    std::mt19937_64 gen(3);
    const HomeostasisParams p{6e-5, 3e-4, 0.02, 0.003, 0.06};
    std::vector<DecaySegment> segs{model_segment(p, 90, 50, 90, gen), model_segment(p, 90, 35, 60, gen)};
    CHECK(loss(p, segs, 90.0) < 1e-8);
    CHECK(loss({7e-5, 3e-4, 0.02, 0.003, 0.06}, segs, 90.0) > 1e-4);
}

TEST_CASE("zero parameters give the flat-line loss", "[homeostasis]") {
    std::mt19937_64 gen(4);
    const auto seg = model_segment({6e-5, 3e-4, 0.02, 0.003, 0.06}, 90, 50, 90, gen);
    double ref = 0.0;
    for (double v : seg.e_values) ref += (v - seg.e_values.front()) * (v - seg.e_values.front());
    ref /= static_cast<double>(seg.e_values.size());
    CHECK(loss({}, std::vector<DecaySegment>{seg}, 90.0) == Approx(ref).epsilon(1e-12));
}

TEST_CASE("duplicated segments pool to the same loss", "[homeostasis]") {
    std::mt19937_64 gen(6);
    const auto seg = model_segment({6e-5, 3e-4, 0.02, 0.003, 0.06}, 90, 50, 90, gen);
    const HomeostasisParams q{1e-4, 2e-4, 0.03, 0.001, 0.02};
    CHECK(loss(q, std::vector<DecaySegment>{seg, seg}, 90.0) == Approx(loss(q, std::vector<DecaySegment>{seg}, 90.0)).epsilon(1e-14));
    CHECK_THROWS_AS(loss(q, std::vector<DecaySegment>{}, 90.0), InputError);
}

TEST_CASE("zero iterations return the initialization", "[homeostasis]") {
    std::mt19937_64 gen(8);
    std::vector<DecaySegment> segs{model_segment({6e-5, 3e-4, 0.02, 0.003, 0.06}, 90, 50, 90, gen)};
    FitOptions o;
    o.max_iters = 0;
    const auto r = fit_global(segs, 90.0, o);
    CHECK(r.params.to_array() == kDefaultInit.to_array());
    CHECK(r.final_loss == loss(kDefaultInit, segs, 90.0));
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 0);
    CHECK(r.low_data);
    CHECK_THROWS_AS(fit_global(std::vector<DecaySegment>{}, 90.0), FitError);
}

TEST_CASE("finite-difference gradient agrees with a smaller step", "[homeostasis]") {
    std::mt19937_64 gen(14);
    const HomeostasisParams p{6e-5, 3e-4, 0.02, 0.003, 0.06};
    std::vector<DecaySegment> segs;
    for (int k = 0; k < 3; ++k) segs.push_back(model_segment(p, 90, 30.0 + 15.0 * k, 90, gen));
    const auto g = loss_log_gradient(kDefaultInit, segs, 90.0);
    const auto fine = loss_log_gradient(kDefaultInit, segs, 90.0, 1e-5);
    REQUIRE(g.size() == fine.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        INFO("component " << i);
        CHECK(g[i] == Approx(fine[i]).epsilon(5e-4));  // three significant digits
    }
}

TEST_CASE("gradient descent lowers the loss monotonically", "[homeostasis]") {
    std::mt19937_64 gen(10);
    const HomeostasisParams p{6e-5, 3e-4, 0.02, 0.003, 0.06};
    std::vector<DecaySegment> segs;
    for (int k = 0; k < 4; ++k) segs.push_back(model_segment(p, 90, 30.0 + 10.0 * k, 80, gen));
    FitOptions o;
    o.max_iters = 50;
    const auto r = fit_global(segs, 90.0, o);
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] <= r.loss_trace[i - 1]);
    CHECK(r.final_loss < r.loss_trace.front());
    CHECK(r.params.valid());
}

TEST_CASE("per-peak fits hold the exercise gain at zero", "[homeostasis]") {
    std::mt19937_64 gen(12);
    const HomeostasisParams p{6e-5, 3e-4, 0.02, 0.003, 0.06};
    std::vector<DecaySegment> segs{model_segment(p, 90, 40, 80, gen), model_segment(p, 90, 50, 80, gen)};
    FitOptions o;
    o.max_iters = 20;
    const auto fits = fit_per_peak(segs, 90.0, o);
    REQUIRE(fits.size() == 2);
    for (const auto& f : fits) CHECK(f.params.a4 == 0.0);
}
