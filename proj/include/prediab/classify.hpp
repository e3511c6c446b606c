#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "prediab/data.hpp"
#include "prediab/error.hpp"

namespace prediab {

/// One feature row per participant; labels are +1 (prediabetic) / -1 (normoglycemic).
struct FeatureMatrix {
    std::vector<std::string> ids;
    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;

    std::size_t size() const noexcept { return rows.size(); }
    std::size_t dim() const noexcept { return rows.empty() ? names.size() : rows.front().size(); }

    void validate() const {
        if (ids.size() != rows.size() || labels.size() != rows.size())
            throw EvaluationError("feature matrix ids, rows and labels differ in length");
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != dim()) throw EvaluationError("feature rows differ in dimension");
            if (labels[i] != 1 && labels[i] != -1) throw EvaluationError("labels must be +1 or -1");
            for (double v : rows[i])
                if (!std::isfinite(v)) throw EvaluationError("non-finite feature for " + ids[i]);
        }
    }
};

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

inline constexpr double kDegenerateStd = 1e-12;

/// Z-score transform fitted on training rows (population std). Features whose training
/// std is below kDegenerateStd are only centered. An empty transform is the identity.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // 1.0 for degenerate features

    static Standardizer fit(const std::vector<std::vector<double>>& train) {
        if (train.empty()) throw EvaluationError("cannot standardize an empty training set");
        const std::size_t d = train.front().size();
        Standardizer s;
        s.mean.assign(d, 0.0);
        s.scale.assign(d, 1.0);
        const auto n = static_cast<double>(train.size());
        for (const auto& r : train)
            for (std::size_t k = 0; k < d; ++k) s.mean[k] += r[k];
        for (auto& m : s.mean) m /= n;
        for (std::size_t k = 0; k < d; ++k) {
            double ss = 0.0;
            for (const auto& r : train) ss += (r[k] - s.mean[k]) * (r[k] - s.mean[k]);
            const double sd = std::sqrt(ss / n);
            if (sd >= kDegenerateStd) s.scale[k] = sd;
        }
        return s;
    }

    std::vector<double> apply(const std::vector<double>& row) const {
        if (mean.empty()) return row;
        if (row.size() != mean.size()) throw EvaluationError("row dimension does not match the standardizer");
        std::vector<double> out(row.size());
        for (std::size_t k = 0; k < row.size(); ++k) out[k] = (row[k] - mean[k]) / scale[k];
        return out;
    }

    std::vector<std::vector<double>> apply(const std::vector<std::vector<double>>& rows) const {
        std::vector<std::vector<double>> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(apply(r));
        return out;
    }
};

struct StandardizedRows {
    std::vector<std::vector<double>> rows;
    Standardizer transform;
};

inline StandardizedRows standardize(const std::vector<std::vector<double>>& train,
                                    const std::vector<std::vector<double>>& apply_rows) {
    auto t = Standardizer::fit(train);
    return {t.apply(apply_rows), std::move(t)};
}

// ---------------------------------------------------------------------------
// RBF support vector machine
// ---------------------------------------------------------------------------

inline double rbf_kernel(const std::vector<double>& u, const std::vector<double>& v, double gamma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) d2 += (u[k] - v[k]) * (u[k] - v[k]);
    return std::exp(-gamma * d2);
}

struct SvmOptions {
    double C = 1.0;
    double gamma = 0.0;  // 0 selects 1/d
    // Stop once the maximal KKT violation drops below this. Far inside the usual 1e-3 so
    // the dual variables themselves, not just the violations, are accurate to 1e-3 even
    // when the kernel matrix is nearly singular.
    double tol = 1e-5;
    std::size_t max_iterations = 1'000'000;
};

struct SvmModel {
    std::vector<std::vector<double>> support;  // in standardized space
    std::vector<double> coef;                  // alpha_i * y_i for each support vector
    double b = 0.0;
    double gamma = 0.0;
    double C = 1.0;
    Standardizer scaler;                       // applied to inputs of svm_decision
    std::vector<double> alpha;                 // dual variables of every training row
    std::vector<int> train_labels;
    std::size_t iterations = 0;
};

/// Soft-margin dual by sequential minimal optimization with maximal-violating-pair
/// selection (lowest index wins ties). Rows are used as given.
inline SvmModel svm_train(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                          const SvmOptions& opts = {}) {
    const std::size_t n = X.size();
    if (n == 0 || y.size() != n) throw EvaluationError("SVM training needs rows with matching labels");
    bool pos = false, neg = false;
    for (int v : y) {
        if (v != 1 && v != -1) throw EvaluationError("SVM labels must be +1 or -1");
        (v > 0 ? pos : neg) = true;
    }
    if (!pos || !neg) throw EvaluationError("SVM training set contains a single class");
    const std::size_t d = X.front().size();
    if (d == 0) throw EvaluationError("SVM training rows are empty");
    const double gamma = opts.gamma > 0.0 ? opts.gamma : 1.0 / static_cast<double>(d);
    const double C = opts.C;

    std::vector<double> K(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) K[i * n + j] = K[j * n + i] = rbf_kernel(X[i], X[j], gamma);
    auto Q = [&](std::size_t i, std::size_t j) { return static_cast<double>(y[i] * y[j]) * K[i * n + j]; };

    std::vector<double> alpha(n, 0.0), G(n, -1.0);
    auto in_up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0.0); };
    auto in_low = [&](std::size_t t) { return (y[t] < 0 && alpha[t] < C) || (y[t] > 0 && alpha[t] > 0.0); };
    constexpr double tau = 1e-12;

    std::size_t iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        std::optional<std::size_t> i, j;
        double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -static_cast<double>(y[t]) * G[t];
            if (in_up(t) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (in_low(t) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        if (!i || !j || gmax - gmin < opts.tol) break;
        const std::size_t a = *i, c = *j;
        const double old_a = alpha[a], old_c = alpha[c];
        if (y[a] != y[c]) {
            double quad = Q(a, a) + Q(c, c) + 2.0 * Q(a, c);
            if (quad <= 0.0) quad = tau;
            const double delta = (-G[a] - G[c]) / quad;
            const double diff = alpha[a] - alpha[c];
            alpha[a] += delta;
            alpha[c] += delta;
            if (diff > 0.0) {
                if (alpha[c] < 0.0) {
                    alpha[c] = 0.0;
                    alpha[a] = diff;
                }
            } else if (alpha[a] < 0.0) {
                alpha[a] = 0.0;
                alpha[c] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[a] > C) {
                    alpha[a] = C;
                    alpha[c] = C - diff;
                }
            } else if (alpha[c] > C) {
                alpha[c] = C;
                alpha[a] = C + diff;
            }
        } else {
            double quad = Q(a, a) + Q(c, c) - 2.0 * Q(a, c);
            if (quad <= 0.0) quad = tau;
            const double delta = (G[a] - G[c]) / quad;
            const double sum = alpha[a] + alpha[c];
            alpha[a] -= delta;
            alpha[c] += delta;
            if (sum > C) {
                if (alpha[a] > C) {
                    alpha[a] = C;
                    alpha[c] = sum - C;
                }
            } else if (alpha[c] < 0.0) {
                alpha[c] = 0.0;
                alpha[a] = sum;
            }
            if (sum > C) {
                if (alpha[c] > C) {
                    alpha[c] = C;
                    alpha[a] = sum - C;
                }
            } else if (alpha[a] < 0.0) {
                alpha[a] = 0.0;
                alpha[c] = sum;
            }
        }
        const double da = alpha[a] - old_a, dc = alpha[c] - old_c;
        for (std::size_t t = 0; t < n; ++t) G[t] += Q(t, a) * da + Q(t, c) * dc;
    }

    // Offset from free vectors, or the midpoint of the feasible interval when none is free.
    double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = static_cast<double>(y[t]) * G[t];
        if (alpha[t] >= C) {
            if (y[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (alpha[t] <= 0.0) {
            if (y[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            free_sum += yg;
            ++n_free;
        }
    }
    const double rho = n_free > 0 ? free_sum / static_cast<double>(n_free) : 0.5 * (ub + lb);

    SvmModel m;
    m.b = -rho;
    m.gamma = gamma;
    m.C = C;
    m.alpha = alpha;
    m.train_labels = y;
    m.iterations = iter;
    for (std::size_t t = 0; t < n; ++t)
        if (alpha[t] > 0.0) {
            m.support.push_back(X[t]);
            m.coef.push_back(alpha[t] * static_cast<double>(y[t]));
        }
    return m;
}

/// Decision score; positive means prediabetic, zero or negative normoglycemic.
inline double svm_decision(const SvmModel& m, const std::vector<double>& x) {
    const auto z = m.scaler.apply(x);
    if (!m.support.empty() && z.size() != m.support.front().size())
        throw EvaluationError("input dimension does not match the SVM model");
    double s = m.b;
    for (std::size_t i = 0; i < m.support.size(); ++i) s += m.coef[i] * rbf_kernel(m.support[i], z, m.gamma);
    return s;
}

inline int svm_predict(const SvmModel& m, const std::vector<double>& x) { return svm_decision(m, x) > 0.0 ? 1 : -1; }

/// Standardizes on `train`, trains, and keeps the transform inside the model.
inline SvmModel train_standardized(const std::vector<std::vector<double>>& train, const std::vector<int>& y,
                                   const SvmOptions& opts = {}) {
    auto scaler = Standardizer::fit(train);
    auto m = svm_train(scaler.apply(train), y, opts);
    m.scaler = std::move(scaler);
    return m;
}

// ---------------------------------------------------------------------------
// Metrics and ROC
// ---------------------------------------------------------------------------

struct Confusion {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
};

struct Metrics {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::optional<double> auc;
};

inline Confusion confusion(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.size() != labels.size()) throw EvaluationError("predictions and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 0) (predicted[i] > 0 ? c.tp : c.fn)++;
        else (predicted[i] > 0 ? c.fp : c.tn)++;
    }
    return c;
}

inline Metrics metrics_from(const Confusion& c) {
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    return {ratio(c.tp + c.tn, c.total()), ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp), std::nullopt};
}

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // scores >= threshold are called positive
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// Threshold sweep over the distinct scores, from +inf down. The area is accumulated in
/// integer units of 1/(2PN), so it equals pairwise ordering with ties counted one half.
inline RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw EvaluationError("scores and labels differ in length");
    std::uint64_t P = 0, N = 0;
    for (int l : labels) (l > 0 ? P : N)++;
    if (P == 0 || N == 0) throw EvaluationError("ROC needs both classes");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve r;
    r.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::uint64_t tp = 0, fp = 0, twice_area = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        const std::uint64_t tp0 = tp, fp0 = fp;
        for (; k < order.size() && scores[order[k]] == s; ++k) (labels[order[k]] > 0 ? tp : fp)++;
        twice_area += (fp - fp0) * (tp + tp0);
        r.points.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P), s});
    }
    r.auc = static_cast<double>(twice_area) / static_cast<double>(2 * P * N);
    return r;
}

inline std::string write_roc_csv(const RocCurve& roc) {
    std::string out = "fpr,tpr,threshold\n";
    for (const auto& p : roc.points) out += format_double(p.fpr) + ',' + format_double(p.tpr) + ',' + format_double(p.threshold) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out evaluation
// ---------------------------------------------------------------------------

struct RepetitionResult {
    std::uint64_t seed = 0;
    std::vector<double> scores;  // held-out score per participant, matrix order
    std::vector<int> predicted;
    Confusion counts;
    Metrics metrics;
};

struct EvaluationReport {
    std::string feature_set;
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::size_t repeats = 0;
    std::uint64_t base_seed = 0;
    std::vector<RepetitionResult> repetitions;
    Metrics mean;                       // averaged over the repetitions
    RocCurve roc;                       // pooled over every held-out score of every repetition
    std::vector<double> mean_scores;    // per participant, averaged over repetitions
    std::vector<std::string> warnings;
};

using MatrixBuilder = std::function<FeatureMatrix(std::uint64_t seed)>;

/// For each repetition r the matrix is rebuilt with seed base_seed + r (the only source
/// of run-to-run variation), then every participant is scored by a model trained and
/// standardized on the others. A training fold holding a single class cannot train an
/// SVM; it falls back to the constant classifier of that class (score +1 or -1) and the
/// fold is reported in the warnings.
inline EvaluationReport loso_evaluate(const MatrixBuilder& build, std::size_t repeats, std::uint64_t base_seed,
                                      const SvmOptions& opts = {}, const std::string& feature_set = {}) {
    if (repeats == 0) throw EvaluationError("at least one repetition is required");
    EvaluationReport rep;
    rep.feature_set = feature_set;
    rep.repeats = repeats;
    rep.base_seed = base_seed;
    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;
    for (std::size_t r = 0; r < repeats; ++r) {
        const std::uint64_t seed = base_seed + r;
        const FeatureMatrix fm = build(seed);
        fm.validate();
        const std::size_t n = fm.size();
        if (r == 0) {
            std::size_t n_pos = 0;
            for (int l : fm.labels) n_pos += l > 0 ? 1 : 0;
            if (n_pos == 0 || n_pos == n)
                throw EvaluationError("LOSO needs both classes among the " + std::to_string(n) + " participants");
            rep.ids = fm.ids;
            rep.labels = fm.labels;
            rep.mean_scores.assign(n, 0.0);
        } else if (fm.ids != rep.ids || fm.labels != rep.labels) {
            throw EvaluationError("feature matrix changed participants between repetitions");
        }

        RepetitionResult rr;
        rr.seed = seed;
        for (std::size_t held = 0; held < n; ++held) {
            std::vector<std::vector<double>> train;
            std::vector<int> y;
            for (std::size_t i = 0; i < n; ++i)
                if (i != held) {
                    train.push_back(fm.rows[i]);
                    y.push_back(fm.labels[i]);
                }
            double s;
            if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
                rep.warnings.push_back("repetition " + std::to_string(r) + ": training fold without " + fm.ids[held] +
                                       " has a single class; constant prediction used");
                s = static_cast<double>(y.front());
            } else {
                s = svm_decision(train_standardized(train, y, opts), fm.rows[held]);
            }
            rr.scores.push_back(s);
            rr.predicted.push_back(s > 0.0 ? 1 : -1);
        }
        rr.counts = confusion(rr.predicted, fm.labels);
        rr.metrics = metrics_from(rr.counts);
        rr.metrics.auc = roc_auc(rr.scores, fm.labels).auc;
        rep.mean.accuracy += rr.metrics.accuracy;
        rep.mean.sensitivity += rr.metrics.sensitivity;
        rep.mean.specificity += rr.metrics.specificity;
        rep.mean.auc = rep.mean.auc.value_or(0.0) + *rr.metrics.auc;
        for (std::size_t i = 0; i < n; ++i) rep.mean_scores[i] += rr.scores[i];
        pooled_scores.insert(pooled_scores.end(), rr.scores.begin(), rr.scores.end());
        pooled_labels.insert(pooled_labels.end(), fm.labels.begin(), fm.labels.end());
        rep.repetitions.push_back(std::move(rr));
    }
    const auto k = static_cast<double>(repeats);
    rep.mean.accuracy /= k;
    rep.mean.sensitivity /= k;
    rep.mean.specificity /= k;
    *rep.mean.auc /= k;
    for (auto& s : rep.mean_scores) s /= k;
    rep.roc = roc_auc(pooled_scores, pooled_labels);
    return rep;
}

inline EvaluationReport loso_evaluate(const FeatureMatrix& fm, std::size_t repeats, std::uint64_t base_seed,
                                      const SvmOptions& opts = {}, const std::string& feature_set = {}) {
    return loso_evaluate([&](std::uint64_t) { return fm; }, repeats, base_seed, opts, feature_set);
}

// ---------------------------------------------------------------------------
// Lab-test rule baselines
// ---------------------------------------------------------------------------

enum class LabRule { hba1c_fpg, fpg_ogtt };

struct RuleThresholds {
    double fpg = 100.0;    // mg/dL
    double hba1c = 5.7;    // %
    double ogtt_2h = 140.0;  // mg/dL
};

inline std::string to_string(LabRule r) { return r == LabRule::hba1c_fpg ? "hba1c-fpg" : "fpg-ogtt"; }

inline LabRule parse_lab_rule(std::string_view s) {
    if (s == "hba1c-fpg") return LabRule::hba1c_fpg;
    if (s == "fpg-ogtt") return LabRule::fpg_ogtt;
    throw InputError("unknown rule '" + std::string(s) + "' (expected hba1c-fpg or fpg-ogtt)");
}

/// Prediabetic when either of the rule's two tests reaches its threshold (inclusive).
inline Label rule_baseline(const std::optional<LabPanel>& lab, LabRule rule, const RuleThresholds& th = {}) {
    if (!lab) throw MissingFieldError("lab panel required for the " + to_string(rule) + " rule");
    const bool fpg = lab->fpg >= th.fpg;
    const bool second = rule == LabRule::hba1c_fpg ? lab->hba1c >= th.hba1c : lab->ogtt_2h >= th.ogtt_2h;
    return fpg || second ? Label::prediabetic : Label::normoglycemic;
}

/// Confusion-matrix metrics of a rule against the recorded labels (no AUC: the rule has no score).
inline Metrics evaluate_rule(const std::vector<std::optional<LabPanel>>& labs, const std::vector<int>& labels,
                             LabRule rule, const RuleThresholds& th = {}) {
    if (labs.size() != labels.size()) throw EvaluationError("lab panels and labels differ in length");
    std::vector<int> pred;
    pred.reserve(labs.size());
    for (const auto& l : labs) pred.push_back(label_sign(rule_baseline(l, rule, th)));
    return metrics_from(confusion(pred, labels));
}

}  // namespace prediab
