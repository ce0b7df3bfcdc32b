#include "pizzaquad/pipeline.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;
using namespace pizzaquad;

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

struct Options {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::string variant = "both";
    std::string period = "both";
    std::string load_weights;
    std::string figure;
    int jobs = 0;
    int epochs = -1;
    bool quiet = false;
};

std::mutex g_console;

void say(const std::string& line) {
    std::lock_guard<std::mutex> lock(g_console);
    std::cerr << line << '\n';
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PipelineConfig resolve(const Options& o) {
    PipelineConfig cfg = o.config_path.empty() ? PipelineConfig{} : load_pipeline_config(o.config_path);
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (o.variant != "both") cfg.variants = {parse_variant(o.variant)};
    if (o.period != "both") cfg.periods = {parse_period(o.period)};
    if (o.jobs > 0) cfg.jobs = o.jobs;
    if (o.epochs >= 0) cfg.model.epochs = o.epochs;
    cfg.validate();
    return cfg;
}

fs::path seed_dir(const PipelineConfig& cfg, std::uint64_t seed) { return cfg.out_dir / ("seed-" + std::to_string(seed)); }

struct Job {
    ModelConfig model;
    ModelWeights weights;
    fs::path dir;
    std::string label;
};

// Weights for every seed, or the single file given with --load-weights.
std::vector<Job> obtain_weights(const PipelineConfig& cfg, const Options& o) {
    if (!o.load_weights.empty()) {
        auto [model, weights] = load_weights(o.load_weights);
        fs::path dir = cfg.out_dir / fs::path(o.load_weights).stem();
        return {Job{model, std::move(weights), dir, o.load_weights}};
    }
    std::vector<Job> jobs(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
            try {
                ModelConfig model = cfg.model;
                model.seed = cfg.seeds[i];
                const std::string label = "seed " + std::to_string(model.seed);
                auto progress = [&](const EpochStats& s) {
                    if (!o.quiet && s.epoch % 1000 == 0)
                        say(label + ": epoch " + std::to_string(s.epoch) + " train_acc " + std::to_string(s.train_accuracy) +
                            " test_acc " + std::to_string(s.test_accuracy));
                };
                auto trained = train_or_load(model, cfg.out_dir / "cache", progress);
                if (!o.quiet) say(label + (trained.from_cache ? ": cached " : ": trained ") + trained.path.string());
                jobs[i] = Job{model, std::move(trained.weights), seed_dir(cfg, model.seed), label};
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(cfg.seeds.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return jobs;
}

AnalysisOptions analysis_options(const PipelineConfig& cfg) {
    AnalysisOptions a;
    a.variants = cfg.variants;
    a.periods = cfg.periods;
    return a;
}

void write_figures(const AnalysisReport& r, const fs::path& dir, const std::string& which) {
    if (which.empty() || which == "all") {
        for (const auto& id : figure_ids()) write_file(dir / "figures" / (id + ".tsv"), plot_series(r, id));
    } else {
        write_file(dir / "figures" / (which + ".tsv"), plot_series(r, which));
    }
}

int check_line(const AnalysisReport& r, const std::string& label) {
    std::printf("%s: soundness %s, decomposition %s (max error %.3g)\n", label.c_str(), r.soundness_ok ? "ok" : "FAILED",
                r.decomposition_ok ? "ok" : "FAILED", r.decomposition_max_error);
    for (const auto& w : r.warnings) std::printf("  warning: %s\n", w.c_str());
    return r.soundness_ok && r.decomposition_ok ? kOk : kCheckFailed;
}

int cmd_train(const Options& o) {
    const auto cfg = resolve(o);
    for (const auto& job : obtain_weights(cfg, o)) {
        const auto acc = evaluate(job.weights, job.model.p, all_pairs(job.model.p)).accuracy;
        std::printf("%s: accuracy on all pairs %.6f\n", job.label.c_str(), acc);
    }
    return kOk;
}

// analyze, bound, validate and all share everything but their outputs.
int cmd_analysis(const Options& o, const std::string& mode) {
    const auto cfg = resolve(o);
    if (!o.figure.empty() && o.figure != "all" &&
        std::find(figure_ids().begin(), figure_ids().end(), o.figure) == figure_ids().end())
        throw CLI::ValidationError("--figure", "unknown figure id " + o.figure);
    auto jobs = obtain_weights(cfg, o);
    int status = kOk;
    std::vector<SeedFacts> facts;
    for (auto& job : jobs) {
        const AnalysisReport r = analyze(job.model, job.weights, analysis_options(cfg));
        facts.push_back(r.facts());
        if (mode == "analyze" || mode == "all") {
            write_file(job.dir / "report.json", report_json(r));
            write_file(job.dir / "spectrum.tsv", spectrum_table(r));
        }
        if (mode == "bound" || mode == "all") {
            write_file(job.dir / "bounds.tsv", bound_table(r));
            if (mode == "bound") std::printf("# %s\n%s", job.label.c_str(), bound_table(r).c_str());
        }
        if (mode == "all" || !o.figure.empty()) write_figures(r, job.dir, o.figure);
        status = std::max(status, check_line(r, job.label));
    }
    if (mode == "all" && o.load_weights.empty()) {
        const auto summary = multi_seed_summary(facts);
        write_file(cfg.out_dir / "summary.json", summary_json(summary));
        std::printf("good models %.2f, perfect accuracy %.2f, median relative bound %.3f\n", summary.good_fraction,
                    summary.perfect_accuracy_fraction, summary.median_relative_bound);
    }
    return status;
}

int cmd_report(const Options& o) {
    const auto cfg = resolve(o);
    std::vector<SeedFacts> facts;
    for (auto seed : cfg.seeds) {
        const auto path = seed_dir(cfg, seed) / "report.json";
        if (!fs::exists(path)) throw std::runtime_error("missing " + path.string() + "; run analyze first");
        facts.push_back(facts_from_report_json(read_file(path)));
    }
    const auto summary = multi_seed_summary(facts);
    const std::string text = summary_json(summary);
    write_file(cfg.out_dir / "summary.json", text);
    std::printf("%s", text.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train modular-addition transformers and certify their pizza quadrature."};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON pipeline config")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seeds, "Seed to process (repeatable)");
        sub->add_option("--out", o.out_dir, "Output directory");
        sub->add_option("--jobs", o.jobs, "Seeds processed concurrently")->check(CLI::PositiveNumber);
        sub->add_option("--epochs", o.epochs, "Override the training epoch count")->check(CLI::NonNegativeNumber);
        sub->add_flag("--quiet", o.quiet, "No progress output");
    };
    auto add_analysis = [&](CLI::App* sub) {
        sub->add_option("--variant", o.variant, "abs, relu or both")->check(CLI::IsMember({"abs", "relu", "both"}));
        sub->add_option("--period", o.period, "full, half or both")->check(CLI::IsMember({"full", "half", "both"}));
        sub->add_option("--load-weights", o.load_weights, "Analyze this weights file instead of training")
            ->check(CLI::ExistingFile);
        sub->add_option("--figure", o.figure, "Plot series to write (or 'all')");
    };

    auto* train_cmd = app.add_subcommand("train", "Train (or load from cache) one model per seed");
    add_common(train_cmd);
    std::vector<std::pair<std::string, std::string>> analysis_cmds{
        {"analyze", "Write report.json and spectrum.tsv per seed"},
        {"bound", "Print and write the bound table per seed"},
        {"validate", "Run the soundness and decomposition checks"},
        {"all", "Train, analyze, bound, write figures and the multi-seed summary"}};
    for (const auto& [name, help] : analysis_cmds) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub);
        add_analysis(sub);
    }
    auto* report_cmd = app.add_subcommand("report", "Summarize existing per-seed reports");
    add_common(report_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(o);
        if (report_cmd->parsed()) return cmd_report(o);
        for (const auto& [name, help] : analysis_cmds)
            if (app.get_subcommand(name)->parsed()) return cmd_analysis(o, name);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
