#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "prediab/actigraphy.hpp"
#include "prediab/data.hpp"
#include "prediab/homeostasis.hpp"
#include "prediab/rng.hpp"

namespace prediab {

struct LogNormalSpec {
    double median;
    double log_sd;
};

/// Class-conditional distribution of model parameters and baseline glucose.
struct ClassProfile {
    LogNormalSpec a1, a2, lambda, a3, a4;
    double baseline_mean;  // mg/dL
    double baseline_sd;
};

struct CohortProfile {
    ClassProfile normoglycemic{{6.6e-5, 0.15}, {3.6e-4, 0.15}, {0.016, 0.15}, {0.003, 0.2}, {0.060, 0.15}, 88.0, 3.0};
    ClassProfile prediabetic{{4.8e-5, 0.15}, {2.7e-4, 0.15}, {0.013, 0.15}, {0.003, 0.2}, {0.060, 0.15}, 101.0, 4.0};

    int record_days = 4;
    double cgm_noise_sd = 0.0;        // mg/dL
    int cgm_interval_minutes = 15;
    int accel_rate_hz = 10;
    double k_counts = kDefaultCountsPerG;

    double snack_probability = 0.3;
    double main_meal_load_min = 60.0;  // integrated meal forcing, mg/dL
    double main_meal_load_max = 125.0;
    double snack_load_min = 15.0;
    double snack_load_max = 32.0;

    double walk_probability = 0.85;     // walk after a meal
    double extra_bouts_per_day = 1.5;
    double gap_probability_per_day = 0.0;  // chance of one multi-hour CGM outage per day

    std::size_t n_normoglycemic = 12;
    std::size_t n_prediabetic = 10;

    Instant record_start = parse_iso8601("2023-06-01T00:00:00Z");

    void validate() const {
        for (const ClassProfile* c : {&normoglycemic, &prediabetic})
            for (const LogNormalSpec* s : {&c->a1, &c->a2, &c->lambda, &c->a3, &c->a4})
                if (!(s->median > 0.0) || !(s->log_sd >= 0.0))
                    throw InputError("class parameter distributions must have positive support");
        if (record_days < 3) throw InputError("synthetic records must cover at least 3 days");
        if (cgm_interval_minutes < 1 || accel_rate_hz < 10 || accel_rate_hz > 200 || cgm_noise_sd < 0.0)
            throw InputError("invalid synthetic sensor settings");
    }
};

struct SyntheticParticipant {
    ParticipantRecord record;
    std::vector<GlucoseSample> cgm;
    HomeostasisParams truth;
    double e_bar = 0.0;
    std::vector<double> e_true;  // noise-free excess glucose, 1-minute grid
    std::vector<double> counts;  // derived counts, 1-minute grid
    std::vector<double> consumption;
};

namespace detail {

inline double clamp_normal(Rng& rng, double mean, double sd, double lo, double hi) {
    return std::clamp(rng.normal(mean, sd), lo, hi);
}

inline Instant minute_at(Instant start, std::int64_t minute) { return start + Seconds{60 * minute}; }

struct MealPlan {
    std::int64_t start_min;
    std::int64_t duration_min;
    double load;
};

inline std::vector<MealPlan> plan_meals(const CohortProfile& prof, Rng& rng) {
    struct Slot {
        double center_h;
        double jitter_min;
        bool snack;
    };
    const Slot slots[] = {{7.5, 20, false}, {10.5, 15, true}, {13.0, 20, false}, {16.5, 15, true}, {19.5, 20, false}};
    std::vector<MealPlan> out;
    for (int d = 0; d < prof.record_days; ++d) {
        for (const auto& s : slots) {
            if (s.snack && !rng.bernoulli(prof.snack_probability)) continue;
            const auto start =
                static_cast<std::int64_t>(std::lround(d * 1440 + s.center_h * 60 + rng.uniform(-s.jitter_min, s.jitter_min)));
            auto dur = static_cast<std::int64_t>(s.snack ? std::lround(rng.uniform(5, 12)) : std::lround(rng.uniform(15, 35)));
            // Meals end on a CGM reading so the sampled peak coincides with the end of intake.
            const std::int64_t cadence = prof.cgm_interval_minutes;
            dur += (cadence - (start + dur) % cadence) % cadence;
            const double load = s.snack ? rng.uniform(prof.snack_load_min, prof.snack_load_max)
                                        : rng.uniform(prof.main_meal_load_min, prof.main_meal_load_max);
            out.push_back({start, dur, load});
        }
    }
    return out;
}

inline std::vector<double> plan_activity(const CohortProfile& prof, const std::vector<MealPlan>& meals,
                                         std::size_t n, Rng& rng) {
    std::vector<double> target(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double hour = static_cast<double>(i % 1440) / 60.0;
        if (hour >= 7.0 && hour < 23.0) target[i] = rng.uniform(0.0, 30.0);
    }
    auto bout = [&](std::int64_t start, std::int64_t len, double base) {
        for (std::int64_t m = start; m < start + len; ++m)
            if (m >= 0 && static_cast<std::size_t>(m) < n) target[static_cast<std::size_t>(m)] = base * rng.uniform(0.8, 1.2);
    };
    for (const auto& m : meals) {
        if (!rng.bernoulli(prof.walk_probability)) continue;
        const auto start = m.start_min + m.duration_min + static_cast<std::int64_t>(std::lround(rng.uniform(5, 30)));
        bout(start, static_cast<std::int64_t>(std::lround(rng.uniform(15, 45))), rng.uniform(400, 2500));
    }
    for (int d = 0; d < prof.record_days; ++d) {
        const int bouts = static_cast<int>(prof.extra_bouts_per_day) + (rng.bernoulli(prof.extra_bouts_per_day - std::floor(prof.extra_bouts_per_day)) ? 1 : 0);
        for (int b = 0; b < bouts; ++b) {
            const auto start = static_cast<std::int64_t>(std::lround(d * 1440 + rng.uniform(9.0, 21.0) * 60));
            bout(start, static_cast<std::int64_t>(std::lround(rng.uniform(10, 40))), rng.uniform(100, 1500));
        }
    }
    return target;
}

/// Wrist signal whose band-passed magnitude has rectified mean matching the counts target:
/// a 1 Hz oscillation on top of gravity.
inline AccelStream synthesize_accel(const std::vector<double>& target_counts, const CohortProfile& prof) {
    AccelStream s;
    s.start_ms = to_unix_ms(prof.record_start);
    s.sample_rate_hz = prof.accel_rate_hz;
    const std::size_t per_min = static_cast<std::size_t>(prof.accel_rate_hz) * 60;
    s.samples.resize(target_counts.size() * per_min);
    const double fs = prof.accel_rate_hz;
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
        const double amp = target_counts[i / per_min] * std::numbers::pi / (2.0 * prof.k_counts);
        const double z = 1.0 + amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / fs);
        s.samples[i] = {0.0, 0.0, std::round(z * 1e4) / 1e4};
    }
    return s;
}

inline double sample_class_value(Rng& rng, const LogNormalSpec& s) { return rng.lognormal(s.median, s.log_sd); }

inline LabPanel sample_lab(Label label, double e_bar, Rng& rng) {
    LabPanel p;
    if (label == Label::normoglycemic) {
        p.fpg = clamp_normal(rng, e_bar + 2.0, 3.0, 75.0, 99.0);
        p.ogtt_2h = rng.uniform(85.0, 138.0);
        p.hba1c = rng.uniform(4.8, 5.6);
        return p;
    }
    p.fpg = clamp_normal(rng, e_bar + 2.0, 4.0, 85.0, 125.0);
    p.ogtt_2h = rng.bernoulli(0.6) ? rng.uniform(140.0, 199.0) : rng.uniform(110.0, 139.0);
    p.hba1c = rng.bernoulli(0.7) ? rng.uniform(5.7, 6.4) : rng.uniform(5.2, 5.6);
    if (p.fpg < 100.0 && p.ogtt_2h < 140.0 && p.hba1c < 5.7) p.hba1c = rng.uniform(5.7, 6.4);
    return p;
}

}  // namespace detail

/// Forward-simulates one participant with known parameters and emits the three raw
/// streams plus the resampled glucose record.
inline SyntheticParticipant gen_participant(const CohortProfile& prof, Label label, std::uint64_t seed,
                                            const std::string& id = "P00") {
    prof.validate();
    Rng rng(seed);
    const ClassProfile& cp = label == Label::prediabetic ? prof.prediabetic : prof.normoglycemic;
    SyntheticParticipant out;
    out.truth.a1 = detail::sample_class_value(rng, cp.a1);
    out.truth.a2 = detail::sample_class_value(rng, cp.a2);
    out.truth.lambda = std::min(detail::sample_class_value(rng, cp.lambda), HomeostasisParams::kMaxLambda);
    out.truth.a3 = detail::sample_class_value(rng, cp.a3);
    out.truth.a4 = detail::sample_class_value(rng, cp.a4);
    out.e_bar = rng.normal(cp.baseline_mean, cp.baseline_sd);

    ParticipantRecord& rec = out.record;
    rec.id = id;
    rec.label = label;
    rec.biometrics.gender = rng.bernoulli(13.0 / 22.0) ? Gender::male : Gender::female;
    rec.biometrics.age_years = std::round(detail::clamp_normal(rng, 43.3, 16.8, 19.0, 80.0));
    rec.biometrics.weight_kg = std::round(detail::clamp_normal(rng, 82.1, 16.0, 45.0, 150.0) * 10.0) / 10.0;
    rec.biometrics.height_cm = std::round(rec.biometrics.gender == Gender::male ? detail::clamp_normal(rng, 176.0, 7.0, 150.0, 205.0)
                                                                                 : detail::clamp_normal(rng, 163.0, 6.0, 140.0, 190.0));
    rec.lab = detail::sample_lab(label, out.e_bar, rng);

    const std::size_t n = static_cast<std::size_t>(prof.record_days) * 1440;
    const auto meals = detail::plan_meals(prof, rng);
    std::vector<double> forcing(n, 0.0);
    for (const auto& m : meals) {
        rec.meals.push_back({detail::minute_at(prof.record_start, m.start_min),
                             detail::minute_at(prof.record_start, m.start_min + m.duration_min), std::nullopt});
        for (std::int64_t k = m.start_min; k < m.start_min + m.duration_min; ++k)
            if (k >= 0 && static_cast<std::size_t>(k) < n) forcing[static_cast<std::size_t>(k)] += m.load / static_cast<double>(m.duration_min);
    }
    rec.meals = merge_meals(std::move(rec.meals));

    const auto target = detail::plan_activity(prof, meals, n, rng);
    rec.accel = detail::synthesize_accel(target, prof);
    const auto counts = activity_counts(bandpass_magnitude(rec.accel), prof.k_counts);
    out.counts = align_counts(counts, prof.record_start, n);
    out.consumption = consumption_rate(out.counts, bmr(rec.biometrics));

    // Start from the resting equilibrium reached after a day without meals.
    std::vector<double> rest(1440, out.consumption.front());
    const auto burn = simulate_states(out.truth, out.e_bar, 0.0, 0.0, rest);
    const auto sim = simulate_states(out.truth, out.e_bar, burn.e.back(), burn.w.back(), out.consumption, forcing);
    out.e_true = sim.e;
    for (double e : out.e_true) {
        const double g = e + out.e_bar;
        if (!(g > 30.0 && g < 500.0))
            throw ProfileRejectedError("participant " + id + ": simulated glucose " + format_double(g) +
                                       " mg/dL outside (30, 500)");
    }

    std::vector<std::pair<std::size_t, std::size_t>> outages;
    for (int d = 0; d < prof.record_days; ++d) {
        if (!rng.bernoulli(prof.gap_probability_per_day)) continue;
        const auto s = static_cast<std::size_t>(d * 1440 + std::lround(rng.uniform(0.0, 20.0) * 60));
        outages.emplace_back(s, s + static_cast<std::size_t>(std::lround(rng.uniform(60.0, 180.0))));
    }
    for (std::size_t k = 0; k < n; k += static_cast<std::size_t>(prof.cgm_interval_minutes)) {
        bool dropped = false;
        for (const auto& [a, b] : outages) dropped = dropped || (k > a && k < b);
        if (dropped) continue;
        double g = out.e_true[k] + out.e_bar + (prof.cgm_noise_sd > 0.0 ? rng.normal(0.0, prof.cgm_noise_sd) : 0.0);
        g = std::clamp(std::round(g * 100.0) / 100.0, 1.0, 999.0);
        out.cgm.push_back({detail::minute_at(prof.record_start, static_cast<std::int64_t>(k)), g});
    }
    rec.glucose = resample_uniform(out.cgm);
    return out;
}

struct CohortDataset {
    std::uint64_t seed = 0;
    CohortProfile profile;
    std::vector<SyntheticParticipant> participants;
};

inline std::string participant_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "P%02zu", index + 1);
    return buf;
}

/// Generates the cohort one participant at a time: normoglycemic first, then
/// prediabetic, each from its own seed derived from (seed, id).
template <class Fn>
void for_each_cohort_member(std::size_t n_normo, std::size_t n_pred, std::uint64_t seed, const CohortProfile& profile,
                            Fn&& fn) {
    if (n_normo < 1 || n_pred < 1) throw InputError("cohort needs at least one participant per class");
    for (std::size_t i = 0; i < n_normo + n_pred; ++i) {
        const auto id = participant_id(i);
        const Label label = i < n_normo ? Label::normoglycemic : Label::prediabetic;
        fn(gen_participant(profile, label, derive_seed(seed, id), id));
    }
}

/// In-memory cohort. Accelerometer streams are dropped unless requested; the derived
/// counts are kept either way.
inline CohortDataset gen_cohort(std::size_t n_normo, std::size_t n_pred, std::uint64_t seed, CohortProfile profile = {},
                                bool keep_accel = false) {
    profile.n_normoglycemic = n_normo;
    profile.n_prediabetic = n_pred;
    CohortDataset ds;
    ds.seed = seed;
    ds.profile = profile;
    for_each_cohort_member(n_normo, n_pred, seed, profile, [&](SyntheticParticipant&& p) {
        if (!keep_accel) p.record.accel.samples = {};
        ds.participants.push_back(std::move(p));
    });
    return ds;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("write failed for " + path.string());
}

inline nlohmann::ordered_json ground_truth_entry(const SyntheticParticipant& p) {
    return {{"id", p.record.id},
            {"label", to_string(p.record.label)},
            {"a1", p.truth.a1},
            {"a2", p.truth.a2},
            {"lambda", p.truth.lambda},
            {"a3", p.truth.a3},
            {"a4", p.truth.a4},
            {"e_bar", p.e_bar}};
}

inline nlohmann::ordered_json ground_truth_header(std::uint64_t seed, const CohortProfile& profile) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["record_days"] = profile.record_days;
    j["cgm_noise_sd"] = profile.cgm_noise_sd;
    j["cgm_interval_minutes"] = profile.cgm_interval_minutes;
    j["k_counts"] = profile.k_counts;
    j["participants"] = nlohmann::ordered_json::array();
    return j;
}

inline nlohmann::ordered_json ground_truth_json(const CohortDataset& ds) {
    auto j = ground_truth_header(ds.seed, ds.profile);
    for (const auto& p : ds.participants) j["participants"].push_back(ground_truth_entry(p));
    return j;
}

/// Writes `<root>/<id>/{manifest.json,cgm.csv,accel.csv,meals.jsonl}`.
inline void write_participant(const SyntheticParticipant& p, const std::filesystem::path& root) {
    if (p.record.accel.samples.empty()) throw InputError("participant " + p.record.id + " has no accelerometer stream to write");
    const auto dir = root / p.record.id;
    std::filesystem::create_directories(dir);
    ParticipantManifest m{p.record.id, p.record.biometrics, p.record.label, p.record.lab,
                          {"cgm.csv", "accel.csv", "meals.jsonl"}};
    write_text_file(dir / "manifest.json", write_manifest(m));
    write_text_file(dir / "cgm.csv", write_cgm_csv(p.cgm));
    write_text_file(dir / "accel.csv", write_accel_csv(p.record.accel));
    write_text_file(dir / "meals.jsonl", write_meals_jsonl(p.record.meals));
}

/// Writes an in-memory cohort generated with keep_accel = true, plus `ground_truth.json`.
inline void write_dataset(const CohortDataset& ds, const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    for (const auto& p : ds.participants) write_participant(p, root);
    write_text_file(root / "ground_truth.json", ground_truth_json(ds).dump(2) + "\n");
}

/// Generates and writes the cohort participant by participant, so memory holds a single
/// accelerometer stream at a time.
inline void write_cohort(std::size_t n_normo, std::size_t n_pred, std::uint64_t seed, CohortProfile profile,
                         const std::filesystem::path& root) {
    profile.n_normoglycemic = n_normo;
    profile.n_prediabetic = n_pred;
    std::filesystem::create_directories(root);
    auto truth = ground_truth_header(seed, profile);
    for_each_cohort_member(n_normo, n_pred, seed, profile, [&](SyntheticParticipant&& p) {
        write_participant(p, root);
        truth["participants"].push_back(ground_truth_entry(p));
    });
    write_text_file(root / "ground_truth.json", truth.dump(2) + "\n");
}

}  // namespace prediab
