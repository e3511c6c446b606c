// Command-line front end: synthesize a cohort, run pipeline stages, render reports.
//
// Exit codes: 0 success, 1 unexpected failure, 2 input/parse error, 3 fitting failure,
// 4 evaluation failure.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "prediab/prediab.hpp"

namespace {

using namespace prediab;

struct Flags {
    std::string config;
    std::string dataset;
    std::string out;
    std::string features;
    std::size_t repeats = 0;
    std::uint64_t seed = 0;
    std::size_t bootstrap = 0;
    double k_counts = 0.0;
    std::size_t jobs = 0;
    std::string rule;
    double max_gap = 0.0;
    int max_iters = 0;
    double tol = 0.0;
};

/// Registers the pipeline flags on a subcommand; values only override the config file
/// when given explicitly.
void add_pipeline_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "TOML-style configuration file (flags override it)");
    cmd->add_option("--dataset", f.dataset, "dataset root with one directory per participant");
    cmd->add_option("--out", f.out, "output directory for artifacts");
    cmd->add_option("--features", f.features, "feature sets, comma separated: fv, fh, fhc, fl");
    cmd->add_option("--repeats", f.repeats, "LOSO repetitions (default 20)");
    cmd->add_option("--seed", f.seed, "base seed (default 42)");
    cmd->add_option("--bootstrap", f.bootstrap, "bootstrap resamples B; 0 = plain mean (default 1000)");
    cmd->add_option("--k-counts", f.k_counts, "counts per g of rectified band-passed acceleration");
    cmd->add_option("--jobs", f.jobs, "participants processed in parallel (default 1)");
    cmd->add_option("--rule", f.rule, "lab rule baseline: hba1c-fpg or fpg-ogtt (default both)");
    cmd->add_option("--max-gap", f.max_gap, "CGM gaps longer than this many minutes are masked");
    cmd->add_option("--max-iters", f.max_iters, "gradient-descent iteration cap");
    cmd->add_option("--tol", f.tol, "relative loss-change stopping tolerance");
}

PipelineConfig resolve_config(const CLI::App* cmd, const Flags& f) {
    PipelineConfig cfg;
    if (!f.config.empty()) cfg = parse_config(read_text_file(f.config));
    auto given = [&](const char* name) { return cmd->get_option(name)->count() > 0; };
    if (given("--dataset")) cfg.dataset = f.dataset;
    if (given("--out")) cfg.out = f.out;
    if (given("--features")) cfg.features = parse_feature_list(f.features);
    if (given("--repeats")) cfg.repeats = f.repeats;
    if (given("--seed")) cfg.seed = f.seed;
    if (given("--bootstrap")) cfg.bootstrap = f.bootstrap;
    if (given("--k-counts")) cfg.k_counts = f.k_counts;
    if (given("--jobs")) cfg.jobs = f.jobs;
    if (given("--rule")) cfg.rule = parse_lab_rule(f.rule);
    if (given("--max-gap")) cfg.max_gap_minutes = f.max_gap;
    if (given("--max-iters")) cfg.max_iters = f.max_iters;
    if (given("--tol")) cfg.tol = f.tol;
    if (cfg.dataset.empty()) throw InputError("--dataset is required (or set dataset in the config file)");
    return cfg;
}

int run_main(int argc, char** argv) {
    CLI::App app{"Prediabetes screening from CGM, accelerometer and meal-diary data"};
    app.require_subcommand(1);
    Flags flags;

    struct StageCmd {
        const char* name;
        const char* help;
        Stage stage;
        CLI::App* cmd = nullptr;
    };
    StageCmd stages[] = {
        {"ingest", "validate and resample the streams; write resampled glucose and counts", Stage::ingest},
        {"fit", "fit the homeostasis model per participant", Stage::fit},
        {"features", "compute curve features and write features.csv", Stage::features},
        {"evaluate", "LOSO evaluation and rule baselines; write report.json and ROC CSVs", Stage::evaluate},
        {"run", "all stages, then print the summary table", Stage::evaluate},
    };
    for (auto& s : stages) {
        s.cmd = app.add_subcommand(s.name, s.help);
        add_pipeline_flags(s.cmd, flags);
    }

    auto* report = app.add_subcommand("report", "render an existing report.json");
    std::string report_out = "out", style = "text", report_set;
    report->add_option("--out", report_out, "output directory of a previous run");
    report->add_option("--style", style, "text, json or csv")->check(CLI::IsMember({"text", "json", "csv"}));
    report->add_option("--features", report_set, "feature set whose ROC CSV is printed with --style csv");

    auto* synth = app.add_subcommand("synth", "write a synthetic cohort in the dataset layout");
    std::string synth_out;
    std::uint64_t synth_seed = 42;
    std::size_t n_normo = 12, n_pred = 10;
    CohortProfile profile;
    synth->add_option("--out", synth_out, "dataset root to create")->required();
    synth->add_option("--seed", synth_seed, "cohort seed (default 42)");
    synth->add_option("--n-normo", n_normo, "normoglycemic participants (default 12)");
    synth->add_option("--n-pred", n_pred, "prediabetic participants (default 10)");
    synth->add_option("--days", profile.record_days, "record length in days (default 4)");
    synth->add_option("--noise", profile.cgm_noise_sd, "CGM noise standard deviation, mg/dL (default 0)");
    synth->add_option("--k-counts", profile.k_counts, "counts calibration used to synthesize the accelerometer");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (const auto& s : stages) {
        if (!s.cmd->parsed()) continue;
        const auto cfg = resolve_config(s.cmd, flags);
        const auto outcome = run_pipeline(cfg, s.stage);
        if (std::string(s.name) == "run") std::cout << render_summary(outcome.report);
        else std::cerr << s.name << ": wrote " << outcome.artifacts.size() << " artifacts to " << cfg.out.string() << "\n";
        return 0;
    }
    if (report->parsed()) {
        const fs::path dir = report_out;
        const auto doc = nlohmann::ordered_json::parse(read_text_file(dir / "report.json"));
        if (style == "json") {
            std::cout << doc.dump(2) << "\n";
        } else if (style == "text") {
            std::cout << render_summary(doc);
        } else {
            const auto evals = doc.value("evaluations", nlohmann::ordered_json::array());
            if (evals.empty()) throw EvaluationError("report has no evaluated feature set, so no ROC CSV exists");
            std::string file = evals.front()["roc_csv"].get<std::string>();
            if (!report_set.empty()) file = "roc_" + to_string(parse_feature_set(report_set)) + ".csv";
            std::cout << read_text_file(dir / file);
        }
        return 0;
    }
    if (synth->parsed()) {
        profile.validate();
        write_cohort(n_normo, n_pred, synth_seed, profile, synth_out);
        std::cerr << "synth: wrote " << n_normo + n_pred << " participants to " << synth_out << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_main(argc, argv);
    } catch (const prediab::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const prediab::FitError& e) {
        std::cerr << "fit error: " << e.what() << "\n";
        return 3;
    } catch (const prediab::EvaluationError& e) {
        std::cerr << "evaluation error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
