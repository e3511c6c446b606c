#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prediab/error.hpp"
#include "prediab/time.hpp"

namespace prediab {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct GlucoseSample {
    Instant timestamp;
    double glucose;  // mg/dL

    bool operator==(const GlucoseSample&) const = default;
};

/// Glucose on a 1-minute grid. `gap_mask[i]` marks minutes interpolated across an
/// outage longer than the configured maximum gap; they take no part in any statistic.
struct UniformGlucoseSeries {
    static constexpr Seconds step{60};

    Instant start{};
    std::vector<double> values;
    std::vector<bool> gap_mask;

    std::size_t size() const noexcept { return values.size(); }
    Instant time_at(std::size_t i) const { return start + step * static_cast<std::int64_t>(i); }
    bool masked(std::size_t i) const { return gap_mask[i]; }
    std::size_t unmasked_count() const {
        return static_cast<std::size_t>(std::count(gap_mask.begin(), gap_mask.end(), false));
    }
};

struct AccelSample {
    double x, y, z;  // g

    bool operator==(const AccelSample&) const = default;
};

struct AccelStream {
    std::int64_t start_ms = 0;  // Unix epoch milliseconds of the first sample
    int sample_rate_hz = 0;
    std::vector<AccelSample> samples;

    double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

struct MealEvent {
    Instant start;
    Instant end;
    std::optional<std::string> photo;

    bool operator==(const MealEvent&) const = default;
};

enum class Gender { male, female };

struct Biometrics {
    Gender gender = Gender::male;
    double weight_kg = 70.0;
    double height_cm = 170.0;
    double age_years = 40.0;
};

struct LabPanel {
    double fpg = 0.0;      // mg/dL
    double ogtt_2h = 0.0;  // mg/dL
    double hba1c = 0.0;    // percent
};

enum class Label { normoglycemic, prediabetic };

inline std::string to_string(Label l) { return l == Label::prediabetic ? "prediabetic" : "normoglycemic"; }
inline std::string to_string(Gender g) { return g == Gender::female ? "female" : "male"; }

/// Classifier sign convention: prediabetic is the positive class.
inline int label_sign(Label l) { return l == Label::prediabetic ? +1 : -1; }

inline Label parse_label(std::string_view s) {
    if (s == "normoglycemic") return Label::normoglycemic;
    if (s == "prediabetic") return Label::prediabetic;
    throw UnknownLabelError("unknown label '" + std::string(s) + "' (expected normoglycemic or prediabetic)");
}

struct StreamFiles {
    std::string cgm;
    std::string accel;
    std::string meals;
};

/// Participant description as stored on disk; stream paths are not yet resolved.
struct ParticipantManifest {
    std::string id;
    Biometrics biometrics;
    Label label = Label::normoglycemic;
    std::optional<LabPanel> lab;
    StreamFiles files;
};

struct ParticipantRecord {
    std::string id;
    Biometrics biometrics;
    Label label = Label::normoglycemic;
    std::optional<LabPanel> lab;
    UniformGlucoseSeries glucose;
    AccelStream accel;
    std::vector<MealEvent> meals;
};

inline void validate(const Biometrics& b) {
    auto check = [](double v, double lo, double hi, const char* name) {
        if (!std::isfinite(v) || v <= lo || v >= hi)
            throw RangeError(std::string(name) + " = " + std::to_string(v) + " outside (" + std::to_string(lo) + ", " +
                             std::to_string(hi) + ")");
    };
    check(b.weight_kg, 20.0, 300.0, "weight_kg");
    check(b.height_cm, 100.0, 250.0, "height_cm");
    check(b.age_years, 18.0, 120.0, "age_years");
}

inline void validate(const LabPanel& p) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v) || v <= 0.0) throw RangeError(std::string(name) + " must be positive and finite");
    };
    check(p.fpg, "fpg_mgdl");
    check(p.ogtt_2h, "ogtt2h_mgdl");
    check(p.hba1c, "hba1c_pct");
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

namespace detail {

/// Splits into lines, dropping a trailing '\r' on each.
inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        pos = nl + 1;
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t c = line.find(sep, pos);
        if (c == std::string_view::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, c - pos));
        pos = c + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// CGM CSV: timestamp,glucose_mgdl
// ---------------------------------------------------------------------------

inline std::vector<GlucoseSample> parse_cgm_csv(std::string_view text) {
    auto lines = detail::split_lines(text);
    if (lines.empty() || detail::trim(lines[0]) != "timestamp,glucose_mgdl")
        throw ParseError(1, "expected header 'timestamp,glucose_mgdl'");
    std::vector<GlucoseSample> out;
    out.reserve(lines.size() - 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (detail::trim(lines[i]).empty()) continue;
        auto f = detail::split_fields(lines[i]);
        if (f.size() != 2) throw ParseError(line_no, "expected 2 fields");
        GlucoseSample s;
        try {
            s.timestamp = parse_iso8601(detail::trim(f[0]));
        } catch (const InputError& e) {
            throw ParseError(line_no, e.what());
        }
        if (!detail::parse_number(f[1], s.glucose)) throw ParseError(line_no, "malformed glucose value");
        if (!std::isfinite(s.glucose) || s.glucose <= 0.0 || s.glucose >= 1000.0)
            throw ParseError(line_no, "glucose outside (0, 1000) mg/dL");
        if (!out.empty()) {
            if (s.timestamp == out.back().timestamp) throw DuplicateTimestampError(line_no, "duplicate timestamp");
            if (s.timestamp < out.back().timestamp) throw OrderingError(line_no, "timestamps not increasing");
        }
        out.push_back(s);
    }
    return out;
}

inline std::string write_cgm_csv(const std::vector<GlucoseSample>& samples) {
    std::string out = "timestamp,glucose_mgdl\n";
    for (const auto& s : samples) {
        out += format_iso8601(s.timestamp);
        out += ',';
        out += format_double(s.glucose);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Accelerometer CSV: t_ms,x_g,y_g,z_g
// ---------------------------------------------------------------------------

inline constexpr double kMaxRateJitter = 0.20;

inline AccelStream parse_accel_csv(std::string_view text) {
    auto lines = detail::split_lines(text);
    if (lines.empty() || detail::trim(lines[0]) != "t_ms,x_g,y_g,z_g")
        throw ParseError(1, "expected header 't_ms,x_g,y_g,z_g'");
    std::vector<std::int64_t> t;
    AccelStream stream;
    t.reserve(lines.size());
    stream.samples.reserve(lines.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (lines[i].empty()) continue;
        auto f = detail::split_fields(lines[i]);
        if (f.size() != 4) throw ParseError(line_no, "expected 4 fields");
        std::int64_t ms;
        AccelSample s;
        if (!detail::parse_number(f[0], ms)) throw ParseError(line_no, "malformed t_ms");
        if (!detail::parse_number(f[1], s.x) || !detail::parse_number(f[2], s.y) || !detail::parse_number(f[3], s.z))
            throw ParseError(line_no, "malformed acceleration component");
        for (double c : {s.x, s.y, s.z})
            if (!std::isfinite(c) || std::abs(c) >= 16.0) throw ParseError(line_no, "acceleration component outside (-16, 16) g");
        if (!t.empty() && ms <= t.back()) throw OrderingError(line_no, "t_ms not strictly increasing");
        t.push_back(ms);
        stream.samples.push_back(s);
    }
    if (t.empty()) throw InputError("accelerometer file contains no samples");
    if (t.size() < 2) throw InputError("need at least 2 accelerometer samples to estimate the sample rate");

    std::vector<std::int64_t> gaps(t.size() - 1);
    for (std::size_t i = 1; i < t.size(); ++i) gaps[i - 1] = t[i] - t[i - 1];
    std::vector<std::int64_t> sorted = gaps;
    auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    double median = static_cast<double>(*mid);
    if (sorted.size() % 2 == 0) {
        auto lower = *std::max_element(sorted.begin(), mid);
        median = 0.5 * (median + static_cast<double>(lower));
    }
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        if (std::abs(static_cast<double>(gaps[i]) - median) > kMaxRateJitter * median)
            throw JitterError("irregular accelerometer spacing at line " + std::to_string(i + 3) + ": gap " +
                              std::to_string(gaps[i]) + " ms vs median " + format_double(median) + " ms");
    }
    stream.start_ms = t.front();
    stream.sample_rate_hz = static_cast<int>(std::lround(1000.0 / median));
    if (stream.sample_rate_hz < 10 || stream.sample_rate_hz > 200)
        throw RangeError("accelerometer sample rate " + std::to_string(stream.sample_rate_hz) + " Hz outside [10, 200]");
    return stream;
}

inline std::int64_t accel_sample_time_ms(const AccelStream& s, std::size_t i) {
    return s.start_ms + static_cast<std::int64_t>(std::llround(static_cast<double>(i) * 1000.0 / s.sample_rate_hz));
}

inline std::string write_accel_csv(const AccelStream& stream) {
    std::string out = "t_ms,x_g,y_g,z_g\n";
    out.reserve(stream.samples.size() * 24);
    char buf[32];
    for (std::size_t i = 0; i < stream.samples.size(); ++i) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, accel_sample_time_ms(stream, i));
        out.append(buf, p);
        for (double c : {stream.samples[i].x, stream.samples[i].y, stream.samples[i].z}) {
            out += ',';
            auto [q, ec2] = std::to_chars(buf, buf + sizeof buf, c);
            out.append(buf, q);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Meal diary: JSON Lines {start, end, photo?}
// ---------------------------------------------------------------------------

inline constexpr Seconds kMaxMealDuration{4 * 3600};

/// Sorts by start and merges overlapping or abutting events; the first event's photo is kept.
inline std::vector<MealEvent> merge_meals(std::vector<MealEvent> meals) {
    std::stable_sort(meals.begin(), meals.end(), [](const MealEvent& a, const MealEvent& b) { return a.start < b.start; });
    std::vector<MealEvent> out;
    for (auto& m : meals) {
        if (!out.empty() && m.start <= out.back().end) {
            out.back().end = std::max(out.back().end, m.end);
            if (!out.back().photo) out.back().photo = std::move(m.photo);
        } else {
            out.push_back(std::move(m));
        }
    }
    return out;
}

inline std::vector<MealEvent> parse_meals(std::string_view text) {
    auto lines = detail::split_lines(text);
    std::vector<MealEvent> meals;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (detail::trim(lines[i]).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        if (!j.is_object() || !j.contains("start") || !j.contains("end") || !j["start"].is_string() ||
            !j["end"].is_string())
            throw ParseError(line_no, "meal needs string fields 'start' and 'end'");
        MealEvent m;
        try {
            m.start = parse_iso8601(j["start"].get<std::string>());
            m.end = parse_iso8601(j["end"].get<std::string>());
        } catch (const InputError& e) {
            throw ParseError(line_no, e.what());
        }
        if (j.contains("photo") && !j["photo"].is_null()) {
            if (!j["photo"].is_string()) throw ParseError(line_no, "'photo' must be a string");
            m.photo = j["photo"].get<std::string>();
        }
        if (m.end <= m.start) throw IntervalError("line " + std::to_string(line_no) + ": meal end not after start");
        if (m.end - m.start >= kMaxMealDuration)
            throw IntervalError("line " + std::to_string(line_no) + ": meal lasts 4 hours or more");
        meals.push_back(std::move(m));
    }
    return merge_meals(std::move(meals));
}

inline std::string write_meals_jsonl(const std::vector<MealEvent>& meals) {
    std::string out;
    for (const auto& m : meals) {
        nlohmann::ordered_json j;
        j["start"] = format_iso8601(m.start);
        j["end"] = format_iso8601(m.end);
        if (m.photo) j["photo"] = *m.photo;
        out += j.dump();
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest JSON
// ---------------------------------------------------------------------------

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw MissingFieldError("missing field '" + where + key + "'");
    return j.at(key);
}

inline double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = require(j, key, where);
    if (!v.is_number()) throw InputError("field '" + where + key + "' must be a number");
    return v.get<double>();
}

inline std::string require_string(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = require(j, key, where);
    if (!v.is_string()) throw InputError("field '" + where + key + "' must be a string");
    return v.get<std::string>();
}

}  // namespace detail

inline ParticipantManifest parse_manifest(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, e.what());
    }
    using detail::require;
    using detail::require_number;
    using detail::require_string;
    ParticipantManifest m;
    m.id = require_string(j, "id", "");
    if (m.id.empty()) throw InputError("participant id must not be empty");

    const auto& b = require(j, "biometrics", "");
    std::string gender = require_string(b, "gender", "biometrics.");
    if (gender == "male")
        m.biometrics.gender = Gender::male;
    else if (gender == "female")
        m.biometrics.gender = Gender::female;
    else
        throw InputError("unknown gender '" + gender + "'");
    m.biometrics.weight_kg = require_number(b, "weight_kg", "biometrics.");
    m.biometrics.height_cm = require_number(b, "height_cm", "biometrics.");
    m.biometrics.age_years = require_number(b, "age_years", "biometrics.");
    validate(m.biometrics);

    m.label = parse_label(require_string(j, "label", ""));

    if (j.contains("lab") && !j["lab"].is_null()) {
        const auto& l = j["lab"];
        LabPanel p;
        p.fpg = require_number(l, "fpg_mgdl", "lab.");
        p.ogtt_2h = require_number(l, "ogtt2h_mgdl", "lab.");
        p.hba1c = require_number(l, "hba1c_pct", "lab.");
        validate(p);
        m.lab = p;
    }

    const auto& f = require(j, "files", "");
    m.files.cgm = require_string(f, "cgm", "files.");
    m.files.accel = require_string(f, "accel", "files.");
    m.files.meals = require_string(f, "meals", "files.");
    return m;
}

inline std::string write_manifest(const ParticipantManifest& m) {
    nlohmann::ordered_json j;
    j["id"] = m.id;
    j["biometrics"] = {{"gender", to_string(m.biometrics.gender)},
                       {"weight_kg", m.biometrics.weight_kg},
                       {"height_cm", m.biometrics.height_cm},
                       {"age_years", m.biometrics.age_years}};
    j["label"] = to_string(m.label);
    if (m.lab) j["lab"] = {{"fpg_mgdl", m.lab->fpg}, {"ogtt2h_mgdl", m.lab->ogtt_2h}, {"hba1c_pct", m.lab->hba1c}};
    j["files"] = {{"cgm", m.files.cgm}, {"accel", m.files.accel}, {"meals", m.files.meals}};
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

inline constexpr double kDefaultMaxGapMinutes = 45.0;

/// Linear interpolation onto a 1-minute grid anchored at the first sample.
/// Grid minutes strictly inside a source interval longer than `max_gap_minutes`
/// are flagged in the gap mask.
inline UniformGlucoseSeries resample_uniform(const std::vector<GlucoseSample>& samples,
                                             double max_gap_minutes = kDefaultMaxGapMinutes) {
    if (samples.size() < 2) throw InputError("resampling needs at least 2 glucose samples");
    UniformGlucoseSeries out;
    out.start = samples.front().timestamp;
    const std::int64_t span = seconds_between(samples.front().timestamp, samples.back().timestamp);
    const std::size_t n = static_cast<std::size_t>(span / 60) + 1;
    out.values.resize(n);
    out.gap_mask.assign(n, false);
    const double max_gap_s = max_gap_minutes * 60.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Instant t = out.time_at(i);
        while (j + 1 < samples.size() && samples[j + 1].timestamp <= t) ++j;
        if (samples[j].timestamp == t || j + 1 >= samples.size()) {
            out.values[i] = samples[j].glucose;
            continue;
        }
        const auto& a = samples[j];
        const auto& b = samples[j + 1];
        const double dt = static_cast<double>(seconds_between(a.timestamp, b.timestamp));
        const double frac = static_cast<double>(seconds_between(a.timestamp, t)) / dt;
        out.values[i] = a.glucose + frac * (b.glucose - a.glucose);
        out.gap_mask[i] = dt > max_gap_s;
    }
    return out;
}

/// Grid index of the first minute at or after `t` (may be negative or past the end).
inline std::int64_t grid_index_ceil(const UniformGlucoseSeries& s, Instant t) {
    std::int64_t d = seconds_between(s.start, t);
    return d >= 0 ? (d + 59) / 60 : -((-d) / 60);
}

/// Grid index of the last minute at or before `t`.
inline std::int64_t grid_index_floor(const UniformGlucoseSeries& s, Instant t) {
    std::int64_t d = seconds_between(s.start, t);
    return d >= 0 ? d / 60 : -((-d + 59) / 60);
}

inline std::string write_uniform_series_csv(const UniformGlucoseSeries& s) {
    std::string out = "t_iso,glucose_mgdl,gap\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += format_iso8601(s.time_at(i));
        out += ',';
        out += format_double(s.values[i]);
        out += s.gap_mask[i] ? ",1\n" : ",0\n";
    }
    return out;
}

}  // namespace prediab
