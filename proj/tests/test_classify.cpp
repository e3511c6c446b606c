#include "catch_amalgamated.hpp"

#include <cmath>
#include <random>

#include "oracles/svm_dual.hpp"
#include "prediab/classify.hpp"

using namespace prediab;
using Catch::Approx;

namespace {

using Rows = std::vector<std::vector<double>>;

struct Fixture {
    Rows X;
    std::vector<int> y;
};

Fixture six_point_line() {
    return {{{-2.0}, {-1.0}, {-0.3}, {0.4}, {1.2}, {2.5}}, {-1, -1, 1, -1, 1, 1}};
}

Fixture random_fixture(std::uint64_t seed, std::size_t n, std::size_t d, double shift) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Fixture f;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i % 2 == 0 ? 1 : -1;
        std::vector<double> x(d);
        for (auto& v : x) v = nd(gen) + shift * label;
        f.X.push_back(x);
        f.y.push_back(label);
    }
    return f;
}

void check_dual_feasible(const SvmModel& m) {
    double eq = 0.0;
    for (std::size_t i = 0; i < m.alpha.size(); ++i) {
        CHECK(m.alpha[i] >= 0.0);
        CHECK(m.alpha[i] <= m.C);
        eq += m.alpha[i] * m.train_labels[i];
    }
    CHECK(std::abs(eq) < 1e-9);
}

}  // namespace

TEST_CASE("two points standardize to minus and plus one", "[classify]") {
    const auto s = standardize({{0.0}, {2.0}}, {{0.0}, {2.0}});
    CHECK(s.rows == Rows{{-1.0}, {1.0}});
    CHECK(s.transform.mean == std::vector<double>{1.0});
    CHECK(s.transform.scale == std::vector<double>{1.0});
}

TEST_CASE("constant feature is centered but not scaled", "[classify]") {
    const auto s = standardize({{5.0, 1.0}, {5.0, 3.0}}, {{5.0, 1.0}, {7.0, 3.0}});
    CHECK(s.rows[0][0] == 0.0);
    CHECK(s.rows[1][0] == 2.0);
    CHECK(s.rows[1][1] == 1.0);
}

TEST_CASE("held-out rows use training statistics only", "[classify]") {
    // Training {0, 2}: mean 1, sd 1, so the held-out 4 maps to 3. Pooled over {0, 2, 4}
    // the z-score would be (4 - 2) / sqrt(8/3) = 1.2247.
    const auto s = standardize({{0.0}, {2.0}}, {{4.0}});
    CHECK(s.rows[0][0] == Approx(3.0));
    CHECK(s.rows[0][0] != Approx(2.0 / std::sqrt(8.0 / 3.0)));
}

TEST_CASE("symmetric two-point SVM", "[classify]") {
    const auto m = svm_train({{-1.0}, {1.0}}, {-1, 1});
    CHECK(svm_decision(m, {1.0}) > 0.0);
    CHECK(svm_decision(m, {-1.0}) < 0.0);
    CHECK(std::abs(svm_decision(m, {0.0})) < 1e-9);
    CHECK(svm_predict(m, {0.5}) == 1);
    check_dual_feasible(m);
}

TEST_CASE("six-point fixture matches the exhaustive dual", "[classify]") {
    const auto f = six_point_line();
    const auto m = svm_train(f.X, f.y);
    const auto ref = oracle::solve_dual_exhaustive(f.X, f.y, 1.0, 1.0);
    for (std::size_t i = 0; i < f.X.size(); ++i) CHECK(m.alpha[i] == Approx(ref.alpha[i]).margin(1e-3));
    for (double x = -3.0; x <= 3.0; x += 0.25)
        CHECK(svm_decision(m, {x}) == Approx(oracle::dual_decision(ref, f.X, f.y, 1.0, {x})).margin(1e-2));
    check_dual_feasible(m);
}

TEST_CASE("random small fixtures match the exhaustive dual", "[classify]") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto f = random_fixture(seed, 3 + seed % 4, 1 + seed % 3, 0.4);
        const double gamma = 1.0 / static_cast<double>(f.X.front().size());
        const auto m = svm_train(f.X, f.y);
        const auto ref = oracle::solve_dual_exhaustive(f.X, f.y, 1.0, gamma);
        INFO("seed " << seed);
        for (std::size_t i = 0; i < f.X.size(); ++i) CHECK(m.alpha[i] == Approx(ref.alpha[i]).margin(1e-3));
        check_dual_feasible(m);
    }
}

TEST_CASE("free support vectors sit on the margin", "[classify]") {
    const auto f = random_fixture(21, 30, 2, 0.8);
    const auto m = svm_train(f.X, f.y);
    std::size_t free = 0;
    for (std::size_t i = 0; i < f.X.size(); ++i)
        if (m.alpha[i] > 1e-6 && m.alpha[i] < m.C - 1e-6) {
            ++free;
            CHECK(std::abs(svm_decision(m, f.X[i])) == Approx(1.0).margin(1e-2));
        }
    CHECK(free > 0);
    check_dual_feasible(m);
}

TEST_CASE("well separated blobs are learned", "[classify]") {
    const auto f = random_fixture(5, 40, 2, 1.5);  // class means 3 sd apart
    const auto m = svm_train(f.X, f.y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < f.X.size(); ++i) correct += svm_predict(m, f.X[i]) == f.y[i] ? 1 : 0;
    CHECK(static_cast<double>(correct) / 40.0 >= 0.95);
    check_dual_feasible(m);
}

TEST_CASE("single-class training is refused", "[classify]") {
    CHECK_THROWS_AS(svm_train({{0.0}, {1.0}}, {1, 1}), EvaluationError);
    CHECK_THROWS_AS(svm_train({{0.0}}, {1, -1}), EvaluationError);
}

TEST_CASE("AUC of ranked, inverted and mixed scores", "[classify]") {
    CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, -1, -1}).auc == 1.0);
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {1, 1, -1, -1}).auc == 0.0);
    CHECK(roc_auc({0.9, 0.4, 0.6, 0.1}, {1, -1, 1, -1}).auc == 1.0);
    // Positives {0.4, 0.6} against negatives {0.9, 0.1}: two of four pairs ordered.
    CHECK(roc_auc({0.9, 0.4, 0.6, 0.1}, {-1, 1, 1, -1}).auc == 0.5);
    CHECK(roc_auc({0.9, 0.4, 0.6, 0.1}, {-1, -1, 1, 1}).auc == 0.25);
    CHECK(roc_auc({0.5, 0.5}, {1, -1}).auc == 0.5);
    CHECK_THROWS_AS(roc_auc({0.5, 0.4}, {1, 1}), EvaluationError);
}

TEST_CASE("AUC equals pair counting", "[classify]") {
    std::mt19937_64 gen(77);
    std::uniform_int_distribution<int> level(0, 9);
    for (std::size_t n = 2; n <= 50; ++n) {
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = 0.1 * level(gen);  // coarse levels force ties
            l[i] = i == 0 ? 1 : i == 1 ? -1 : (level(gen) < 5 ? 1 : -1);
        }
        CHECK(roc_auc(s, l).auc == oracle::auc_pair_count(s, l));
    }
}

TEST_CASE("ROC curve runs from the origin to (1, 1)", "[classify]") {
    const auto r = roc_auc({0.9, 0.4, 0.6, 0.1, 0.6}, {1, -1, 1, -1, -1});
    REQUIRE(r.points.size() == 5);
    CHECK(r.points.front().fpr == 0.0);
    CHECK(r.points.front().tpr == 0.0);
    CHECK(std::isinf(r.points.front().threshold));
    CHECK(r.points.back().fpr == 1.0);
    CHECK(r.points.back().tpr == 1.0);
    for (std::size_t i = 1; i < r.points.size(); ++i) {
        CHECK(r.points[i].fpr >= r.points[i - 1].fpr);
        CHECK(r.points[i].tpr >= r.points[i - 1].tpr);
    }
    CHECK(write_roc_csv(r).rfind("fpr,tpr,threshold\n0,0,inf\n", 0) == 0);
}

TEST_CASE("confusion counts and metrics", "[classify]") {
    const auto c = confusion({1, 1, -1, -1, 1, -1}, {1, -1, -1, 1, 1, -1});
    CHECK(c.tp == 2);
    CHECK(c.fp == 1);
    CHECK(c.tn == 2);
    CHECK(c.fn == 1);
    const auto m = metrics_from(c);
    CHECK(m.accuracy == Approx(4.0 / 6.0));
    CHECK(m.sensitivity == Approx(2.0 / 3.0));
    CHECK(m.specificity == Approx(2.0 / 3.0));
}

TEST_CASE("separable cohort evaluates near perfectly", "[classify]") {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> nd(0.0, 0.3);
    FeatureMatrix m;
    m.names = {"f1", "f2", "f3"};
    for (std::size_t i = 0; i < 22; ++i) {
        const int label = i < 12 ? -1 : 1;
        m.ids.push_back("P" + std::to_string(i + 1));
        m.labels.push_back(label);
        m.rows.push_back({label * 1.0 + nd(gen), nd(gen), -label * 0.5 + nd(gen)});
    }
    const auto r = loso_evaluate(m, 20, 42);
    CHECK(r.mean.accuracy >= 0.95);
    REQUIRE(r.mean.auc);
    CHECK(*r.mean.auc >= 0.98);
    CHECK(r.repetitions.size() == 20);
    CHECK(r.warnings.empty());
}

TEST_CASE("uninformative features give the majority rate", "[classify]") {
    FeatureMatrix m;
    m.names = {"f1", "f2"};
    for (std::size_t i = 0; i < 22; ++i) {
        m.ids.push_back("P" + std::to_string(i + 1));
        m.labels.push_back(i < 12 ? -1 : 1);
        m.rows.push_back({3.0, -1.0});
    }
    const auto r = loso_evaluate(m, 3, 42);
    CHECK(r.mean.accuracy == Approx(12.0 / 22.0));
    CHECK(*r.mean.auc == Approx(0.5).margin(0.05));
}

TEST_CASE("LOSO is deterministic under a fixed seed", "[classify]") {
    MatrixBuilder build = [](std::uint64_t seed) {
        std::mt19937_64 g(seed);
        std::normal_distribution<double> jitter(0.0, 0.1);
        FeatureMatrix m;
        m.names = {"f1", "f2"};
        for (std::size_t i = 0; i < 10; ++i) {
            m.ids.push_back("P" + std::to_string(i + 1));
            m.labels.push_back(i < 5 ? -1 : 1);
            m.rows.push_back({(i < 5 ? -0.5 : 0.5) + jitter(g), static_cast<double>(i % 3) + jitter(g)});
        }
        return m;
    };
    const auto a = loso_evaluate(build, 5, 1234);
    const auto b = loso_evaluate(build, 5, 1234);
    CHECK(a.mean.accuracy == b.mean.accuracy);
    CHECK(*a.mean.auc == *b.mean.auc);
    CHECK(a.mean_scores == b.mean_scores);
    for (std::size_t r = 0; r < 5; ++r) {
        CHECK(a.repetitions[r].seed == 1234 + r);
        CHECK(a.repetitions[r].scores == b.repetitions[r].scores);
    }
}

TEST_CASE("degenerate folds fall back to a constant prediction", "[classify]") {
    FeatureMatrix m;
    m.names = {"f1"};
    m.ids = {"P01", "P02", "P03"};
    m.labels = {-1, 1, 1};
    m.rows = {{0.0}, {1.0}, {1.2}};
    const auto r = loso_evaluate(m, 2, 7);
    // Holding out P01 leaves only positives; P01 is called positive and a warning is kept.
    CHECK(r.repetitions[0].predicted[0] == 1);
    CHECK(r.warnings.size() == 2);
    m.labels = {1, 1, 1};
    CHECK_THROWS_AS(loso_evaluate(m, 2, 7), EvaluationError);
}

TEST_CASE("lab rules use inclusive thresholds", "[classify]") {
    CHECK(rule_baseline(LabPanel{110, 120, 5.4}, LabRule::hba1c_fpg) == Label::prediabetic);
    CHECK(rule_baseline(LabPanel{95, 120, 5.4}, LabRule::hba1c_fpg) == Label::normoglycemic);
    CHECK(rule_baseline(LabPanel{95, 120, 5.4}, LabRule::fpg_ogtt) == Label::normoglycemic);
    CHECK(rule_baseline(LabPanel{100.0, 120, 5.4}, LabRule::hba1c_fpg) == Label::prediabetic);
    CHECK(rule_baseline(LabPanel{95, 140.0, 5.4}, LabRule::fpg_ogtt) == Label::prediabetic);
    CHECK(rule_baseline(LabPanel{95, 140.0, 5.4}, LabRule::hba1c_fpg) == Label::normoglycemic);
    CHECK(rule_baseline(LabPanel{95, 120, 5.7}, LabRule::hba1c_fpg) == Label::prediabetic);
    CHECK_THROWS_AS(rule_baseline(std::nullopt, LabRule::fpg_ogtt), MissingFieldError);
    CHECK(parse_lab_rule("fpg-ogtt") == LabRule::fpg_ogtt);
    CHECK_THROWS_AS(parse_lab_rule("ogtt"), InputError);
}
