#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "prediab/actigraphy.hpp"
#include "prediab/classify.hpp"
#include "prediab/curvefeat.hpp"
#include "prediab/data.hpp"
#include "prediab/error.hpp"
#include "prediab/homeostasis.hpp"
#include "prediab/rng.hpp"
#include "prediab/synth.hpp"

namespace prediab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class FeatureSet { fv, fh, fhc, fl };

inline std::string to_string(FeatureSet f) {
    switch (f) {
        case FeatureSet::fv: return "fv";
        case FeatureSet::fh: return "fh";
        case FeatureSet::fhc: return "fhc";
        case FeatureSet::fl: return "fl";
    }
    return "?";
}

inline FeatureSet parse_feature_set(std::string_view s) {
    std::string l(s);
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "fv") return FeatureSet::fv;
    if (l == "fh") return FeatureSet::fh;
    if (l == "fhc") return FeatureSet::fhc;
    if (l == "fl") return FeatureSet::fl;
    throw InputError("unknown feature set '" + std::string(s) + "' (expected fv, fh, fhc or fl)");
}

/// Comma-separated list of feature sets, duplicates removed, order kept.
inline std::vector<FeatureSet> parse_feature_list(std::string_view s) {
    std::vector<FeatureSet> out;
    for (auto part : detail::split_fields(s)) {
        const auto f = parse_feature_set(detail::trim(part));
        if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    }
    return out;
}

inline std::string method_name(FeatureSet f) {
    switch (f) {
        case FeatureSet::fv: return "SVM w. FV";
        case FeatureSet::fh: return "SVM w. FH";
        case FeatureSet::fhc: return "SVM w. FH + FC";
        case FeatureSet::fl: return "SVM w. FL";
    }
    return "?";
}

inline std::string method_name(LabRule r) { return r == LabRule::hba1c_fpg ? "HbA1c + FPG" : "FPG + OGTT"; }

struct PipelineConfig {
    fs::path dataset;
    fs::path out = "out";
    double k_counts = kDefaultCountsPerG;
    double max_gap_minutes = kDefaultMaxGapMinutes;
    std::size_t bootstrap = kDefaultBootstrap;
    int max_iters = 2000;
    double tol = 1e-8;
    std::size_t repeats = 20;
    std::uint64_t seed = 42;
    std::vector<FeatureSet> features{FeatureSet::fhc};
    std::optional<LabRule> rule;  // both rules when unset
    RuleThresholds thresholds;
    std::size_t jobs = 1;

    void validate() const {
        auto bad = [](const std::string& what) { throw InputError("config: " + what); };
        if (!(k_counts > 0.0 && k_counts < 1e9)) bad("k_counts must be in (0, 1e9)");
        if (!(max_gap_minutes >= 1.0 && max_gap_minutes <= 1440.0)) bad("max_gap_minutes must be in [1, 1440]");
        if (bootstrap > 1'000'000) bad("bootstrap must be at most 1000000");
        if (max_iters < 0 || max_iters > 1'000'000) bad("fit.max_iters must be in [0, 1000000]");
        if (!(tol > 0.0 && tol < 1.0)) bad("fit.tol must be in (0, 1)");
        if (repeats < 1 || repeats > 1000) bad("classify.repeats must be in [1, 1000]");
        if (features.empty()) bad("classify.features must name at least one feature set");
        if (jobs < 1 || jobs > 256) bad("jobs must be in [1, 256]");
        for (double v : {thresholds.fpg, thresholds.hba1c, thresholds.ogtt_2h})
            if (!(v > 0.0 && std::isfinite(v))) bad("rule thresholds must be positive");
    }

    std::vector<LabRule> rules() const {
        if (rule) return {*rule};
        return {LabRule::hba1c_fpg, LabRule::fpg_ogtt};
    }

    /// Every option that can change a result; the output directory and job count are excluded.
    nlohmann::ordered_json canonical() const {
        nlohmann::ordered_json j;
        j["dataset"] = dataset.generic_string();
        j["k_counts"] = k_counts;
        j["max_gap_minutes"] = max_gap_minutes;
        j["bootstrap"] = bootstrap;
        j["fit"] = {{"max_iters", max_iters}, {"tol", tol}};
        nlohmann::ordered_json fsets = nlohmann::ordered_json::array();
        for (auto f : features) fsets.push_back(to_string(f));
        j["classify"] = {{"repeats", repeats}, {"seed", seed}, {"features", fsets}};
        j["rules"] = {{"rule", rule ? to_string(*rule) : "both"},
                      {"fpg", thresholds.fpg},
                      {"hba1c", thresholds.hba1c},
                      {"ogtt_2h", thresholds.ogtt_2h}};
        return j;
    }

    std::string hash() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical().dump())));
        return buf;
    }
};

namespace detail {

using TomlValue = std::variant<std::string, double, std::int64_t, bool, std::vector<std::string>>;

inline std::string strip_toml_comment(std::string_view line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
    }
    return std::string(line);
}

inline std::string parse_toml_string(std::string_view v, std::size_t line) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') throw ParseError(line, "expected a quoted string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size()) {
            const char c = v[++i];
            out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
        } else {
            out += v[i];
        }
    }
    return out;
}

inline TomlValue parse_toml_value(std::string_view v, std::size_t line) {
    v = trim(v);
    if (v.empty()) throw ParseError(line, "missing value");
    if (v.front() == '"') return parse_toml_string(v, line);
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        if (v.back() != ']') throw ParseError(line, "unterminated array");
        std::vector<std::string> items;
        auto inner = trim(v.substr(1, v.size() - 2));
        if (!inner.empty())
            for (auto part : split_fields(inner)) {
                auto t = trim(part);
                if (t.empty()) continue;  // trailing comma
                items.push_back(parse_toml_string(t, line));
            }
        return items;
    }
    std::string digits;
    for (char c : v)
        if (c != '_') digits += c;
    std::int64_t i;
    if (parse_number(digits, i)) return i;
    double d;
    if (parse_number(digits, d)) return d;
    throw ParseError(line, "unrecognized value '" + std::string(v) + "'");
}

}  // namespace detail

/// Applies a TOML-style document (the subset used by the pipeline: `[section]` headers,
/// `key = value` with strings, numbers, booleans and string arrays, `#` comments) on top
/// of `base`. Unknown keys are rejected.
inline PipelineConfig parse_config(std::string_view text, PipelineConfig base = {}) {
    using detail::TomlValue;
    std::string section;
    std::size_t line_no = 0;
    for (auto raw : detail::split_lines(text)) {
        ++line_no;
        const std::string stripped = detail::strip_toml_comment(raw);
        const auto line = detail::trim(stripped);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(line_no, "malformed section header");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            if (section != "fit" && section != "classify" && section != "rules")
                throw InputError("config line " + std::to_string(line_no) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
        const std::string key = (section.empty() ? "" : section + ".") + std::string(detail::trim(line.substr(0, eq)));
        const TomlValue value = detail::parse_toml_value(line.substr(eq + 1), line_no);

        auto where = [&] { return "config line " + std::to_string(line_no) + " (" + key + ")"; };
        auto as_string = [&]() -> std::string {
            if (auto s = std::get_if<std::string>(&value)) return *s;
            throw InputError(where() + ": expected a string");
        };
        auto as_double = [&]() -> double {
            if (auto d = std::get_if<double>(&value)) return *d;
            if (auto i = std::get_if<std::int64_t>(&value)) return static_cast<double>(*i);
            throw InputError(where() + ": expected a number");
        };
        auto as_count = [&]() -> std::int64_t {
            if (auto i = std::get_if<std::int64_t>(&value)) {
                if (*i < 0) throw InputError(where() + ": must not be negative");
                return *i;
            }
            throw InputError(where() + ": expected an integer");
        };

        if (key == "dataset") base.dataset = as_string();
        else if (key == "out") base.out = as_string();
        else if (key == "k_counts") base.k_counts = as_double();
        else if (key == "max_gap_minutes") base.max_gap_minutes = as_double();
        else if (key == "bootstrap") base.bootstrap = static_cast<std::size_t>(as_count());
        else if (key == "jobs") base.jobs = static_cast<std::size_t>(as_count());
        else if (key == "fit.max_iters") base.max_iters = static_cast<int>(std::min<std::int64_t>(as_count(), 1'000'000'000));
        else if (key == "fit.tol") base.tol = as_double();
        else if (key == "classify.repeats") base.repeats = static_cast<std::size_t>(as_count());
        else if (key == "classify.seed") base.seed = static_cast<std::uint64_t>(as_count());
        else if (key == "classify.features") {
            if (auto list = std::get_if<std::vector<std::string>>(&value)) {
                base.features.clear();
                for (const auto& s : *list) {
                    const auto f = parse_feature_set(s);
                    if (std::find(base.features.begin(), base.features.end(), f) == base.features.end()) base.features.push_back(f);
                }
            } else {
                base.features = parse_feature_list(as_string());
            }
        } else if (key == "rules.rule") {
            const auto r = as_string();
            if (r == "both") base.rule.reset();
            else base.rule = parse_lab_rule(r);
        } else if (key == "rules.fpg") base.thresholds.fpg = as_double();
        else if (key == "rules.hba1c") base.thresholds.hba1c = as_double();
        else if (key == "rules.ogtt_2h") base.thresholds.ogtt_2h = as_double();
        else throw InputError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    return base;
}

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

inline std::string read_text_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return std::move(ss).str();
}

/// Runs `f`, prefixing any pipeline error with the stage and participant while keeping
/// its category (and therefore its exit code).
template <class F>
auto in_stage(const std::string& stage, const std::string& who, F&& f) -> decltype(f()) {
    const std::string prefix = stage + (who.empty() ? "" : " [" + who + "]") + ": ";
    try {
        return f();
    } catch (const InputError& e) {
        throw InputError(prefix + e.what());
    } catch (const FitError& e) {
        throw FitError(prefix + e.what());
    } catch (const SimulationError& e) {
        throw FitError(prefix + e.what());
    } catch (const EvaluationError& e) {
        throw EvaluationError(prefix + e.what());
    }
}

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Results must be written by index;
/// the exception of the lowest failing index is rethrown, so failures are reproducible.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    auto work = [&](std::atomic<std::size_t>& next) {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::atomic<std::size_t> next{0};
    const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(n, 1));
    if (threads <= 1) {
        work(next);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back([&] { work(next); });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Ingest and actigraphy
// ---------------------------------------------------------------------------

/// Participant directories (those holding a manifest.json), sorted by name.
inline std::vector<fs::path> list_participant_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw InputError("dataset root " + root.string() + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw InputError("no participant directories with manifest.json under " + root.string());
    return dirs;
}

inline ParticipantRecord load_participant(const fs::path& dir, double max_gap_minutes) {
    const std::string who = dir.filename().string();
    const auto manifest = in_stage("ingest", who, [&] { return parse_manifest(read_text_file(dir / "manifest.json")); });
    auto load = [&](const std::string& stream, auto&& parse) {
        return in_stage("ingest", manifest.id, [&] {
            try {
                return parse();
            } catch (const InputError& e) {
                throw InputError(stream + ": " + e.what());
            }
        });
    };
    ParticipantRecord rec;
    rec.id = manifest.id;
    rec.biometrics = manifest.biometrics;
    rec.label = manifest.label;
    rec.lab = manifest.lab;
    rec.glucose = load(manifest.files.cgm, [&] {
        return resample_uniform(parse_cgm_csv(read_text_file(dir / manifest.files.cgm)), max_gap_minutes);
    });
    rec.meals = load(manifest.files.meals, [&] { return parse_meals(read_text_file(dir / manifest.files.meals)); });
    rec.accel = load(manifest.files.accel, [&] { return parse_accel_csv(read_text_file(dir / manifest.files.accel)); });
    return rec;
}

/// Everything downstream stages need from one participant; the raw accelerometer
/// stream is reduced to counts here and dropped.
struct ParticipantData {
    std::string id;
    Biometrics biometrics;
    Label label = Label::normoglycemic;
    std::optional<LabPanel> lab;
    UniformGlucoseSeries glucose;
    std::vector<MealEvent> meals;
    CountsSeries counts;
    std::vector<double> counts_on_grid;       // aligned to the glucose grid
    std::vector<double> consumption_on_grid;  // c(t), kcal/min
};

inline ParticipantData prepare_participant(ParticipantRecord&& rec, double k_counts) {
    return in_stage("actigraphy", rec.id, [&] {
        ParticipantData d;
        d.counts = activity_counts(bandpass_magnitude(rec.accel), k_counts);
        rec.accel.samples = {};
        d.id = std::move(rec.id);
        d.biometrics = rec.biometrics;
        d.label = rec.label;
        d.lab = rec.lab;
        d.glucose = std::move(rec.glucose);
        d.meals = std::move(rec.meals);
        d.counts_on_grid = align_counts(d.counts, d.glucose.start, d.glucose.size());
        d.consumption_on_grid = consumption_rate(d.counts_on_grid, bmr(d.biometrics));
        return d;
    });
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct ParticipantFit {
    double e_bar = 0.0;
    std::size_t segments = 0;
    FitResult global;
    std::vector<HomeostasisParams> per_peak;  // three-parameter comparison fits
};

inline FitOptions fit_options(const PipelineConfig& cfg) {
    FitOptions o;
    o.max_iters = cfg.max_iters;
    o.tol = cfg.tol;
    return o;
}

inline ParticipantFit fit_participant(const ParticipantData& d, const FitOptions& opts, bool per_peak) {
    return in_stage("fit", d.id, [&] {
        ParticipantFit f;
        f.e_bar = baseline_glucose(d.glucose);
        const auto segs = extract_decay_segments(d.glucose, f.e_bar, d.meals, d.consumption_on_grid);
        f.segments = segs.size();
        if (segs.empty()) throw FitError("no usable decay segment (need a postprandial peak with 6 h of history)");
        f.global = fit_global(segs, f.e_bar, opts);
        if (per_peak)
            for (const auto& r : fit_per_peak(segs, f.e_bar, opts)) f.per_peak.push_back(r.params);
        return f;
    });
}

inline std::string fit_json(const std::string& id, const ParticipantFit& f, const std::string& config_hash) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["a1"] = f.global.params.a1;
    j["a2"] = f.global.params.a2;
    j["lambda"] = f.global.params.lambda;
    j["a3"] = f.global.params.a3;
    j["a4"] = f.global.params.a4;
    j["final_loss"] = f.global.final_loss;
    j["iterations"] = f.global.iterations;
    j["converged"] = f.global.converged;
    j["low_data"] = f.global.low_data;
    j["e_bar"] = f.e_bar;
    j["segments"] = f.segments;
    j["per_peak_fits"] = f.per_peak.size();
    j["config_hash"] = config_hash;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

struct ParticipantResult {
    ParticipantData data;
    std::optional<ParticipantFit> fit;
    CurveOccurrences curves;
    std::optional<std::string> incomplete;  // reason the curve features are unavailable
};

inline std::vector<std::string> feature_names(FeatureSet f) {
    switch (f) {
        case FeatureSet::fv: return {"a1", "a2", "lambda"};
        case FeatureSet::fh: return {"a1", "a2", "lambda", "a4"};
        case FeatureSet::fhc: return {"a1", "a2", "lambda", "a4", "mu_g", "sigma_g", "mu_fg", "mu_npgg"};
        case FeatureSet::fl: return {"fpg", "ogtt_2h", "hba1c"};
    }
    return {};
}

/// Why a participant cannot contribute a row to the feature set, if anything.
inline std::optional<std::string> exclusion_reason(const ParticipantResult& p, FeatureSet f) {
    if (f == FeatureSet::fl) return p.data.lab ? std::nullopt : std::optional<std::string>("no lab panel");
    if (!p.fit) return "no homeostasis fit";
    if (f == FeatureSet::fv && p.fit->per_peak.empty()) return "no per-peak fit";
    if (f == FeatureSet::fhc && p.incomplete) return p.incomplete;
    return std::nullopt;
}

/// Feature row of one participant for one repetition seed.
inline std::vector<double> feature_row(const ParticipantResult& p, FeatureSet f, std::size_t B, std::uint64_t seed) {
    const auto& id = p.data.id;
    switch (f) {
        case FeatureSet::fl: return {p.data.lab->fpg, p.data.lab->ogtt_2h, p.data.lab->hba1c};
        case FeatureSet::fv: {
            std::vector<double> row;
            for (std::uint64_t k = 0; k < 3; ++k) {
                std::vector<double> v;
                for (const auto& pp : p.fit->per_peak) v.push_back(pp.to_array()[k]);
                row.push_back(bootstrap_mean(v, B, derive_seed(seed, id, 100 + k)));
            }
            return row;
        }
        case FeatureSet::fh:
        case FeatureSet::fhc: {
            const auto& q = p.fit->global.params;
            std::vector<double> row{q.a1, q.a2, q.lambda, q.a4};
            if (f == FeatureSet::fhc) {
                const auto c = theta_c(p.curves, B, seed, id);
                row.insert(row.end(), {c.mu_g, c.sigma_g, c.mu_fg, c.mu_npgg});
            }
            return row;
        }
    }
    return {};
}

inline FeatureMatrix build_feature_matrix(const std::vector<const ParticipantResult*>& included, FeatureSet f,
                                          std::size_t B, std::uint64_t seed) {
    FeatureMatrix m;
    m.names = feature_names(f);
    for (const auto* p : included) {
        m.ids.push_back(p->data.id);
        m.labels.push_back(label_sign(p->data.label));
        m.rows.push_back(feature_row(*p, f, B, seed));
    }
    return m;
}

/// `id,mu_g,sigma_g,mu_fg,mu_npgg,a1,a2,lambda,a4,label`, lab columns appended when any
/// participant has a panel. Missing values are empty cells.
inline std::string write_features_csv(const std::vector<ParticipantResult>& results, std::size_t B, std::uint64_t seed) {
    const bool any_lab = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.data.lab.has_value(); });
    std::string out = "id,mu_g,sigma_g,mu_fg,mu_npgg,a1,a2,lambda,a4,label";
    if (any_lab) out += ",fpg,ogtt_2h,hba1c";
    out += '\n';
    for (const auto& r : results) {
        out += r.data.id;
        if (!r.incomplete) {
            const auto c = theta_c(r.curves, B, seed, r.data.id);
            for (double v : {c.mu_g, c.sigma_g, c.mu_fg, c.mu_npgg}) out += ',' + format_double(v);
        } else {
            out += ",,,,";
        }
        if (r.fit) {
            const auto& q = r.fit->global.params;
            for (double v : {q.a1, q.a2, q.lambda, q.a4}) out += ',' + format_double(v);
        } else {
            out += ",,,,";
        }
        out += ',' + to_string(r.data.label);
        if (any_lab) {
            if (r.data.lab)
                for (double v : {r.data.lab->fpg, r.data.lab->ogtt_2h, r.data.lab->hba1c}) out += ',' + format_double(v);
            else
                out += ",,,";
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json metrics_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["accuracy"] = m.accuracy;
    j["sensitivity"] = m.sensitivity;
    j["specificity"] = m.specificity;
    j["auc"] = m.auc ? nlohmann::ordered_json(*m.auc) : nlohmann::ordered_json(nullptr);
    return j;
}

inline void merge_into(nlohmann::ordered_json& dst, const nlohmann::ordered_json& src) {
    for (auto it = src.begin(); it != src.end(); ++it) dst[it.key()] = it.value();
}

inline nlohmann::ordered_json evaluation_json(const EvaluationReport& r, FeatureSet f) {
    nlohmann::ordered_json out;
    out["feature_set"] = to_string(f);
    out["method"] = method_name(f);
    out["features"] = feature_names(f);
    out["n"] = r.ids.size();
    merge_into(out, metrics_json(r.mean));
    out["roc_csv"] = "roc_" + to_string(f) + ".csv";
    out["roc_points"] = r.roc.points.size();
    out["pooled_auc"] = r.roc.auc;
    nlohmann::ordered_json reps = nlohmann::ordered_json::array();
    for (const auto& rr : r.repetitions) {
        nlohmann::ordered_json x;
        x["seed"] = rr.seed;
        merge_into(x, metrics_json(rr.metrics));
        x["tp"] = rr.counts.tp;
        x["tn"] = rr.counts.tn;
        x["fp"] = rr.counts.fp;
        x["fn"] = rr.counts.fn;
        reps.push_back(x);
    }
    out["repetitions"] = reps;
    nlohmann::ordered_json scores = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.ids.size(); ++i)
        scores.push_back({{"id", r.ids[i]}, {"label", r.labels[i] > 0 ? "prediabetic" : "normoglycemic"}, {"mean_score", r.mean_scores[i]}});
    out["loso_scores"] = scores;
    out["warnings"] = r.warnings;
    return out;
}

inline std::string format_table_row(const std::string& method, double acc, double sens, double spec,
                                    std::optional<double> auc) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-18s  %8.2f  %11.2f  %11.2f  ", method.c_str(), acc, sens, spec);
    std::string row = buf;
    if (auc) {
        std::snprintf(buf, sizeof buf, "%4.2f", *auc);
        row += buf;
    }
    while (!row.empty() && row.back() == ' ') row.pop_back();
    return row;
}

/// Table-style text summary of a report document: one row per evaluated method
/// (Accuracy, Sensitivity, Specificity, AUC), then the ROC artifacts.
inline std::string render_summary(const nlohmann::ordered_json& report) {
    std::string out;
    out += "Classification results (LOSO, " + std::to_string(report.value("repeats", 0)) + " repetitions, seed " +
           std::to_string(report.value("seed", std::uint64_t{0})) + ")\n";
    char head[160];
    std::snprintf(head, sizeof head, "%-18s  %8s  %11s  %11s  %s\n", "Method", "Accuracy", "Sensitivity", "Specificity", "AUC");
    out += head;
    out += std::string(62, '-') + "\n";
    auto opt = [](const nlohmann::ordered_json& j) -> std::optional<double> {
        if (!j.contains("auc") || j["auc"].is_null()) return std::nullopt;
        return j["auc"].get<double>();
    };
    const auto evals = report.value("evaluations", nlohmann::ordered_json::array());
    for (const auto& e : evals)
        out += format_table_row(e["method"].get<std::string>(), e["accuracy"].get<double>(), e["sensitivity"].get<double>(),
                                e["specificity"].get<double>(), opt(e)) + "\n";
    const auto rules = report.value("rules", nlohmann::ordered_json::array());
    if (!rules.empty()) {
        out += std::string(62, '-') + "\n";
        for (const auto& r : rules)
            out += format_table_row(r["method"].get<std::string>(), r["accuracy"].get<double>(), r["sensitivity"].get<double>(),
                                    r["specificity"].get<double>(), std::nullopt) + "\n";
    }
    bool any_roc = false;
    for (const auto& e : evals) any_roc = any_roc || e.value("roc_points", 0) > 0;
    if (any_roc) {
        out += "\nROC curves (pooled LOSO scores):\n";
        for (const auto& e : evals)
            out += "  " + e["method"].get<std::string>() + ": " + std::to_string(e["roc_points"].get<std::size_t>()) +
                   " points in " + e["roc_csv"].get<std::string>() + "\n";
    } else {
        out += "\nROC: no curve available (no evaluation completed)\n";
    }
    const auto warnings = report.value("warnings", nlohmann::ordered_json::array());
    if (!warnings.empty()) {
        out += "\nWarnings:\n";
        for (const auto& w : warnings) out += "  - " + w.get<std::string>() + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

enum class Stage { ingest, fit, features, evaluate };

struct PipelineOutcome {
    std::vector<ParticipantResult> participants;
    std::vector<std::pair<FeatureSet, EvaluationReport>> evaluations;
    nlohmann::ordered_json report;       // set once the evaluate stage has run
    std::vector<std::string> artifacts;  // relative to the output directory, in write order
};

namespace detail {

class ArtifactWriter {
public:
    ArtifactWriter(fs::path root, std::vector<std::string>& log) : root_(std::move(root)), log_(log) {}

    void write(const std::string& rel, const std::string& text) {
        const auto path = root_ / rel;
        fs::create_directories(path.parent_path());
        write_text_file(path, text);
        log_.push_back(rel);
    }

private:
    fs::path root_;
    std::vector<std::string>& log_;
};

}  // namespace detail

/// Runs the stages up to `last`, writing each stage's artifacts under cfg.out:
///   ingest   -> ingest/<id>.csv (resampled glucose), counts/<id>.csv
///   fit      -> fit/<id>.json
///   features -> features.csv
///   evaluate -> report.json, roc_<set>.csv, summary.txt
/// plus run.json (config hash, seeds, artifact list). Participants are processed in
/// parallel; everything is written in participant order.
inline PipelineOutcome run_pipeline(const PipelineConfig& cfg, Stage last = Stage::evaluate) {
    cfg.validate();
    const std::string hash = cfg.hash();
    PipelineOutcome outcome;
    detail::ArtifactWriter out(cfg.out, outcome.artifacts);
    fs::create_directories(cfg.out);

    const auto dirs = list_participant_dirs(cfg.dataset);
    const bool need_fit = last != Stage::ingest;
    const bool per_peak = std::find(cfg.features.begin(), cfg.features.end(), FeatureSet::fv) != cfg.features.end();
    const auto fopts = fit_options(cfg);

    std::vector<std::optional<ParticipantResult>> slots(dirs.size());
    parallel_for(dirs.size(), cfg.jobs, [&](std::size_t i) {
        ParticipantResult r{prepare_participant(load_participant(dirs[i], cfg.max_gap_minutes), cfg.k_counts), {}, {}, {}};
        if (need_fit) r.fit = fit_participant(r.data, fopts, per_peak);
        if (last == Stage::features || last == Stage::evaluate) {
            const double e_bar = r.fit ? r.fit->e_bar : baseline_glucose(r.data.glucose);
            r.curves = in_stage("features", r.data.id, [&] {
                return collect_curve_occurrences(r.data.glucose, r.data.meals, r.data.counts_on_grid, e_bar);
            });
            try {
                (void)theta_c(r.curves, 0, 0, r.data.id);
            } catch (const IncompleteFeaturesError& e) {
                r.incomplete = e.what();
            }
        }
        slots[i] = std::move(r);
    });
    std::vector<std::string> seen;
    for (auto& s : slots) {
        if (std::find(seen.begin(), seen.end(), s->data.id) != seen.end())
            throw InputError("ingest: duplicate participant id " + s->data.id);
        seen.push_back(s->data.id);
        outcome.participants.push_back(std::move(*s));
    }

    for (const auto& p : outcome.participants) {
        out.write("ingest/" + p.data.id + ".csv", write_uniform_series_csv(p.data.glucose));
        out.write("counts/" + p.data.id + ".csv", write_counts_csv(p.data.counts));
        if (p.fit) out.write("fit/" + p.data.id + ".json", fit_json(p.data.id, *p.fit, hash));
    }
    if (last == Stage::features || last == Stage::evaluate)
        out.write("features.csv", write_features_csv(outcome.participants, cfg.bootstrap, cfg.seed));

    std::optional<EvaluationError> failure;
    if (last == Stage::evaluate) {
        nlohmann::ordered_json rep;
        rep["config_hash"] = hash;
        rep["config"] = cfg.canonical();
        rep["seed"] = cfg.seed;
        rep["repeats"] = cfg.repeats;
        rep["bootstrap"] = cfg.bootstrap;
        nlohmann::ordered_json warnings = nlohmann::ordered_json::array();
        nlohmann::ordered_json people = nlohmann::ordered_json::array();
        for (const auto& p : outcome.participants) {
            nlohmann::ordered_json x{{"id", p.data.id}, {"label", to_string(p.data.label)}};
            x["segments"] = p.fit ? p.fit->segments : 0;
            x["fasting_windows"] = p.curves.windows.size();
            x["npgg_meals"] = p.curves.npgg.size();
            x["curve_features"] = p.incomplete ? nlohmann::ordered_json(*p.incomplete) : nlohmann::ordered_json("complete");
            people.push_back(x);
        }
        rep["participants"] = people;

        nlohmann::ordered_json evals = nlohmann::ordered_json::array();
        for (FeatureSet f : cfg.features) {
            std::vector<const ParticipantResult*> included;
            for (const auto& p : outcome.participants) {
                if (auto why = exclusion_reason(p, f))
                    warnings.push_back(to_string(f) + ": " + p.data.id + " excluded (" + *why + ")");
                else
                    included.push_back(&p);
            }
            try {
                auto ev = in_stage("evaluate", to_string(f), [&] {
                    return loso_evaluate([&](std::uint64_t seed) { return build_feature_matrix(included, f, cfg.bootstrap, seed); },
                                         cfg.repeats, cfg.seed, SvmOptions{}, to_string(f));
                });
                for (const auto& w : ev.warnings) warnings.push_back(to_string(f) + ": " + w);
                evals.push_back(evaluation_json(ev, f));
                out.write("roc_" + to_string(f) + ".csv", write_roc_csv(ev.roc));
                outcome.evaluations.emplace_back(f, std::move(ev));
            } catch (const EvaluationError& e) {
                warnings.push_back(e.what());
                if (!failure) failure.emplace(e.what());
            }
        }
        rep["evaluations"] = evals;

        nlohmann::ordered_json rules = nlohmann::ordered_json::array();
        std::vector<std::optional<LabPanel>> labs;
        std::vector<int> labels;
        for (const auto& p : outcome.participants)
            if (p.data.lab) {
                labs.push_back(p.data.lab);
                labels.push_back(label_sign(p.data.label));
            }
        if (!labs.empty()) {
            for (LabRule r : cfg.rules()) {
                const auto m = evaluate_rule(labs, labels, r, cfg.thresholds);
                nlohmann::ordered_json x;
                x["rule"] = to_string(r);
                x["method"] = method_name(r);
                x["n"] = labs.size();
                merge_into(x, metrics_json(m));
                rules.push_back(x);
            }
        }
        rep["rules"] = rules;
        rep["warnings"] = warnings;
        outcome.report = rep;
        out.write("report.json", rep.dump(2) + "\n");
        out.write("summary.txt", render_summary(rep));
    }

    nlohmann::ordered_json run;
    run["config_hash"] = hash;
    run["config"] = cfg.canonical();
    run["seeds"] = {{"base", cfg.seed}, {"repeats", cfg.repeats}};
    run["artifacts"] = outcome.artifacts;
    write_text_file(cfg.out / "run.json", run.dump(2) + "\n");
    if (failure) throw *failure;
    return outcome;
}

}  // namespace prediab
