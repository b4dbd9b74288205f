// rubi-bench: dataset generation, training, ablation grid, gradient checks
// and distribution reports.

#include "rubi/dataset_io.hpp"
#include "rubi/experiment.hpp"
#include "rubi/gradcheck_suite.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <mutex>
#include <set>

namespace fs = std::filesystem;
using namespace rubi;
using nlohmann::json;

namespace {

std::mutex g_print;

void say(const std::string& line) {
    std::lock_guard lock(g_print);
    std::cout << line << std::endl;
}

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

std::string pct(const std::optional<double>& v) { return v ? fmt("%.4f", *v) : std::string("-"); }

void print_audit(const Corpus& corpus) {
    const auto audit = bias_audit(corpus.train);
    say("bias audit (train, " + std::to_string(corpus.train.size()) + " examples, " + std::to_string(audit.size()) +
        " patterns)");
    say(fmt("  %-10s %6s %-8s %8s %8s", "pattern", "count", "majority", "share", "entropy"));
    double share_sum = 0.0;
    for (const auto& a : audit) {
        share_sum += a.majority_share;
        say(fmt("  %-10s %6zu %-8s %8.4f %8.4f", a.pattern.key().c_str(), a.count,
                corpus.answers[static_cast<std::size_t>(a.majority_answer)].c_str(), a.majority_share, a.entropy));
    }
    say(fmt("  mean majority share %.4f", share_sum / static_cast<double>(audit.size())));
}

int cmd_gen_data(const std::string& config_path) {
    const RunConfig config = load_config(config_path);
    const Corpus corpus = generate(config.dataset);
    const fs::path dir = dataset_dir(config);
    write_dataset(corpus, dir);
    say("wrote " + dir.string());
    for (Split s : kSplits) say("  " + split_file(s) + ": " + std::to_string(corpus.split(s).size()) + " examples");
    say(std::string("  ") + kSidecarFile);
    print_audit(corpus);
    return 0;
}

void print_result(const RunResult& r) {
    const auto& id = r.test_id.accuracy;
    const auto& ood = r.test_ood.accuracy;
    say(fmt("%s  test_id %.4f  test_ood %.4f (yes_no %s, number %s, other %s)", r.run_id.c_str(), id.overall,
            ood.overall, pct(ood.of(Family::Exist)).c_str(), pct(ood.of(Family::Count)).c_str(),
            pct(ood.of(Family::Color)).c_str()));
}

void write_tables(const fs::path& dir, const std::string& stem, const std::vector<RunReport>& id_reports,
                  const std::vector<RunReport>& ood_reports, const json& extra = {}) {
    fs::create_directories(dir);
    for (const auto* reports : {&id_reports, &ood_reports}) {
        const ComparisonTable table = compare_runs(*reports);
        const std::string base = stem + "_" + table.split;
        std::ofstream(dir / (base + ".csv")) << to_csv(table);
        json doc = table;
        if (!extra.is_null()) doc["extra"] = extra;
        write_json(dir / (base + ".json"), doc);
        say(to_text(table));
    }
}

EpochCallback epoch_printer(const std::string& run) {
    return [run](const EpochRecord& e) {
        say(fmt("[%s] epoch %2zu  lr %.2e  l_qm %.4f  l_qo %.4f  train %.4f  test_id %.4f  test_ood %.4f",
                run.c_str(), e.epoch, e.lr, e.mean_l_qm, e.mean_l_qo, e.train_accuracy, e.test_id_accuracy,
                e.test_ood_accuracy));
    };
}

int cmd_train(const std::string& config_path, std::size_t seeds, bool force) {
    const RunConfig config = load_config(config_path);
    const Corpus corpus = load_corpus(config);
    std::vector<RunReport> id_reports;
    std::vector<RunReport> ood_reports;
    for (const RunConfig& c : seed_sweep(config, seeds)) {
        const RunResult r = run_training(c, corpus, force, epoch_printer(run_id(c)));
        print_result(r);
        id_reports.push_back(r.test_id);
        ood_reports.push_back(r.test_ood);
    }
    const std::string stem = run_id(config).substr(0, run_id(config).rfind("-s")) + "-summary";
    write_tables(resolve_output_dir(config), stem, id_reports, ood_reports);
    return 0;
}

std::vector<RunReport> reports_for(const std::vector<RunResult>& runs, const std::string& label, Split split) {
    std::vector<RunReport> out;
    for (const auto& r : runs) {
        RunReport rep = split == Split::TestId ? r.test_id : r.test_ood;
        rep.label = label;
        out.push_back(std::move(rep));
    }
    return out;
}

int cmd_ablate(const std::string& config_path, std::size_t seeds, std::size_t workers, bool force) {
    const RunConfig base = load_config(config_path);
    const Corpus corpus = load_corpus(base);
    const auto grid = ablation_grid(base);

    // Distinct runs: grid cells may share a configuration.
    std::vector<RunConfig> jobs;
    std::map<std::string, std::size_t> job_of;
    std::vector<std::vector<std::size_t>> cell_jobs(grid.size());
    for (std::size_t c = 0; c < grid.size(); ++c) {
        for (const RunConfig& rc : seed_sweep(grid[c].config, seeds)) {
            const std::string id = run_id(rc);
            auto [it, inserted] = job_of.emplace(id, jobs.size());
            if (inserted) jobs.push_back(rc);
            cell_jobs[c].push_back(it->second);
        }
    }
    say(fmt("ablation: %zu rows, %zu distinct runs, %zu worker(s)", grid.size(), jobs.size(), workers));
    std::vector<RunResult> results(jobs.size());
    run_parallel(jobs.size(), workers, [&](std::size_t i) {
        const RunConfig& rc = jobs[i];
        const fs::path dir = resolve_output_dir(rc) / run_id(rc);
        if (!force && fs::exists(dir / kCheckpointFile)) {
            results[i] = load_run(dir);
            say("reusing " + dir.string());
        } else {
            results[i] = run_training(rc, corpus, true);
        }
        print_result(results[i]);
    });

    std::vector<RunReport> id_reports;
    std::vector<RunReport> ood_reports;
    std::map<std::string, std::vector<RunReport>> ood_by_label;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        std::vector<RunResult> runs;
        for (std::size_t j : cell_jobs[c]) runs.push_back(results[j]);
        for (auto& r : reports_for(runs, grid[c].label, Split::TestId)) id_reports.push_back(std::move(r));
        for (auto& r : reports_for(runs, grid[c].label, Split::TestOod)) {
            ood_by_label[grid[c].label].push_back(r);
            ood_reports.push_back(std::move(r));
        }
    }
    json extra = json::object();
    const std::string baseline = grid.front().label;
    json tv = json::array();
    for (const auto& cell : grid) {
        if (cell.label == baseline || cell.config.train.strategy.strategy != StrategyKind::Rubi) continue;
        const TvSummary s = tv_summary(cell.label, ood_by_label[cell.label], baseline, ood_by_label[baseline]);
        tv.push_back(s);
        say(fmt("TV to test_ood truth: %s closer than %s on %zu/%zu patterns (%.1f%%); mean TV %.4f vs %.4f",
                s.candidate.c_str(), s.baseline.c_str(), s.candidate_closer, s.patterns, 100.0 * s.fraction,
                s.mean_tv_candidate, s.mean_tv_baseline));
    }
    extra["tv_summary"] = tv;
    write_tables(resolve_output_dir(base), "ablation", id_reports, ood_reports, extra);
    return 0;
}

int cmd_gradcheck(const std::string& fault) {
    std::optional<ScopedBackwardFault> injected;
    if (!fault.empty()) {
        try {
            injected.emplace(parse_op(fault), 1.5);
        } catch (const std::invalid_argument& e) {
            throw CLI::ValidationError("--inject-fault", e.what());
        }
    }
    const auto start = std::chrono::steady_clock::now();
    const GradcheckOptions options;
    const auto entries = run_gradcheck_suite(options);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::size_t failed = 0;
    for (const auto& e : entries) {
        failed += e.passed ? 0 : 1;
        say(fmt("%-10s %-20s max_rel %.3e  points %2zu  coords %6zu  %s", e.composite ? "composite" : "primitive",
                e.name.c_str(), e.max_rel_error, e.points, e.coordinates, e.passed ? "PASS" : "FAIL"));
    }
    say(fmt("%zu checks, %zu failed, tolerance %.0e, %.2f s", entries.size(), failed, options.tolerance, seconds));
    return failed == 0 ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::vector<std::string>& pattern_keys,
               const std::string& out_dir) {
    std::vector<QuestionPattern> patterns;
    for (const auto& key : pattern_keys) patterns.push_back(QuestionPattern::parse(key));

    std::vector<RunResult> runs;
    for (const auto& d : run_dirs) runs.push_back(load_run(d));
    const fs::path out = out_dir.empty() ? resolve_output_dir(runs.front().config) / "report" : fs::path(out_dir);
    fs::create_directories(out);

    std::map<std::string, Corpus> corpora;
    std::vector<RunReport> id_reports;
    std::vector<RunReport> ood_reports;
    std::map<std::string, std::vector<RunReport>> ood_by_label;
    for (const RunResult& run : runs) {
        const std::string key = dataset_digest(run.config.dataset);
        if (!corpora.count(key)) corpora.emplace(key, load_corpus(run.config));
        const Corpus& corpus = corpora.at(key);
        const Network net = load_network(run, corpus);
        const auto predictions = predict_split(net, corpus.test_ood, run.config.train.strategy.strategy);
        const auto dist = distribution_report(corpus, Split::TestOod, predictions, patterns);
        json doc{{"run_id", run.run_id}, {"label", run_label(run.config)}, {"split", "test_ood"},
                 {"answers", corpus.answers}, {"patterns", dist}};
        write_json(out / ("distributions_" + run.run_id + ".json"), doc);
        say(fmt("%s: %zu pattern histogram(s)", run.run_id.c_str(), dist.size()));
        for (const auto& d : dist) {
            if (!d.tv) continue;
            const auto argmax_of = [](const std::vector<std::size_t>& h) {
                return static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
            };
            say(fmt("  %-9s train mode %-7s predicted mode %-7s truth mode %-7s TV %.4f", d.pattern.key().c_str(),
                    corpus.answers[argmax_of(d.train)].c_str(), corpus.answers[argmax_of(d.predicted)].c_str(),
                    corpus.answers[argmax_of(d.truth)].c_str(), *d.tv));
        }
        RunReport ood = run.test_ood;
        ood.patterns = dist;
        ood_by_label[ood.label].push_back(ood);
        ood_reports.push_back(std::move(ood));
        id_reports.push_back(run.test_id);
    }

    json extra = json::object();
    json tv = json::array();
    const std::string baseline = StrategyConfig{StrategyKind::Classical}.label();
    if (ood_by_label.count(baseline)) {
        for (const auto& [label, reports] : ood_by_label) {
            if (label == baseline) continue;
            const TvSummary s = tv_summary(label, reports, baseline, ood_by_label.at(baseline));
            tv.push_back(s);
            say(fmt("TV summary: %s closer to test_ood truth than %s on %zu/%zu patterns (%.1f%%); mean TV %.4f vs %.4f",
                    s.candidate.c_str(), s.baseline.c_str(), s.candidate_closer, s.patterns, 100.0 * s.fraction,
                    s.mean_tv_candidate, s.mean_tv_baseline));
        }
    }
    extra["tv_summary"] = tv;
    write_tables(out, "comparison", id_reports, ood_reports, extra);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias-reduction training lab: synthetic changing-priors data, training strategies, reports"};
    app.require_subcommand(1);

    std::string config_path;
    std::size_t seeds = 1;
    std::size_t workers = 1;
    bool force = false;
    std::string fault;
    std::vector<std::string> run_dirs;
    std::vector<std::string> pattern_keys;
    std::string out_dir;

    auto* gen = app.add_subcommand("gen-data", "Generate the dataset splits and print the bias audit");
    gen->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);

    auto* train = app.add_subcommand("train", "Train one configuration (one run per seed)");
    train->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    train->add_option("--seeds", seeds, "Number of consecutive training seeds")->check(CLI::PositiveNumber);
    train->add_flag("--force", force, "Overwrite existing run directories");

    auto* ablate = app.add_subcommand("ablate", "Run the strategy/sampler ablation grid");
    ablate->add_option("--config", config_path, "Base run configuration (JSON)")->required()->check(CLI::ExistingFile);
    ablate->add_option("--seeds", seeds, "Seeds per grid row")->check(CLI::PositiveNumber);
    ablate->add_option("--workers", workers, "Parallel training threads")->check(CLI::PositiveNumber);
    ablate->add_flag("--force", force, "Retrain runs that already exist");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and composite path");
    grad->add_option("--inject-fault", fault, "Scale the backward of one primitive by 1.5 (mutation check)");

    auto* report = app.add_subcommand("report", "Answer-distribution histograms and comparison tables");
    report->add_option("runs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
    report->add_option("--pattern", pattern_keys, "Restrict histograms to family:object (repeatable)");
    report->add_option("--out", out_dir, "Output directory (default <output_dir>/report)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path);
        if (train->parsed()) return cmd_train(config_path, seeds, force);
        if (ablate->parsed()) return cmd_ablate(config_path, seeds, workers, force);
        if (grad->parsed()) return cmd_gradcheck(fault);
        if (report->parsed()) return cmd_report(run_dirs, pattern_keys, out_dir);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}
