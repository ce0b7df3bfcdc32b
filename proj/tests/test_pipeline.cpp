#include "doctest.h"
#include "test_support.hpp"

#include "pizzaquad/pipeline.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace pizzaquad;

namespace {

ModelConfig analysis_config() {
    auto cfg = testing::small_config(13);
    cfg.d_mlp = 64;
    return cfg;
}

int data_rows(const std::string& tsv) {
    return static_cast<int>(std::count(tsv.begin(), tsv.end(), '\n')) - 1;
}

std::vector<std::vector<std::string>> parse_tsv(const std::string& tsv) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(tsv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '\t')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("config hash") {
    ModelConfig a;
    ModelConfig b;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.seed = 1;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.learning_rate = 2e-3;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("pipeline config loading and validation") {
    const auto dir = std::filesystem::temp_directory_path() / "pizzaquad_test_cfg";
    std::filesystem::create_directories(dir);
    const auto path = dir / "cfg.json";
    std::ofstream(path) << R"({"model": {"p": 13, "d_mlp": 64, "epochs": 5}, "seeds": [3, 4], "out": "x",
                               "variants": ["abs"], "periods": ["full"], "jobs": 2})";
    const auto cfg = load_pipeline_config(path);
    CHECK(cfg.model.p == 13);
    CHECK(cfg.model.d_mlp == 64);
    CHECK(cfg.model.d_model == 128);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(cfg.variants == std::vector<Variant>{Variant::Abs});
    CHECK(cfg.jobs == 2);

    std::ofstream(path) << R"({"variants": ["cubic"]})";
    CHECK_THROWS_AS(load_pipeline_config(path), std::invalid_argument);
    std::ofstream(path) << "{not json";
    CHECK_THROWS_AS(load_pipeline_config(path), std::invalid_argument);
    CHECK_THROWS_AS(load_pipeline_config(dir / "missing.json"), std::invalid_argument);

    PipelineConfig empty;
    empty.seeds.clear();
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
    std::filesystem::remove_all(dir);
}

TEST_CASE("analysis of a random model") {
    const auto cfg = analysis_config();
    const auto w = testing::random_weights(cfg, 31, 0.5);
    const auto report = analyze(cfg, w);

    CHECK(report.clustered + report.unclustered == cfg.d_mlp);
    CHECK(report.decomposition_ok);
    CHECK(report.decomposition_max_error < 1e-9);
    CHECK(report.soundness_ok);
    CHECK(report.regressions.size() == 6);
    for (const auto& f : report.frequencies) {
        for (const auto& b : f.bounds) CHECK(b.k == f.k);
        if (!f.bounds.empty()) CHECK(f.sound);
    }

    SUBCASE("analysis is deterministic") {
        CHECK(report_json(analyze(cfg, w)) == report_json(report));
    }
    SUBCASE("facts survive the JSON round trip") {
        const auto facts = report.facts();
        const auto back = facts_from_report_json(report_json(report));
        CHECK(back.seed == facts.seed);
        CHECK(back.key_freqs == facts.key_freqs);
        CHECK(back.mismatched == facts.mismatched);
        CHECK(back.accuracy == doctest::Approx(facts.accuracy));
        REQUIRE(back.bound_rel.size() == facts.bound_rel.size());
        for (std::size_t i = 0; i < facts.bound_rel.size(); ++i)
            if (std::isfinite(facts.bound_rel[i])) CHECK(back.bound_rel[i] == doctest::Approx(facts.bound_rel[i]));
        const auto summary = nlohmann::json::parse(summary_json(multi_seed_summary({facts, back})));
        CHECK(summary.contains("good_fraction"));
    }
    SUBCASE("plot series") {
        for (const auto& id : figure_ids()) CHECK_NOTHROW(plot_series(report, id));
        CHECK_THROWS_AS(plot_series(report, "pie-chart"), std::invalid_argument);

        const auto hist = parse_tsv(plot_series(report, "variance-histogram"));
        CHECK(hist.size() == 20);
        int total = 0;
        for (const auto& row : hist) total += std::stoi(row[2]);
        CHECK(total == cfg.d_mlp);

        std::map<int, double> widths;
        for (const auto& row : parse_tsv(plot_series(report, "rectangles")))
            widths[std::stoi(row[0])] += std::stod(row[2]) - std::stod(row[1]);
        CHECK(widths.size() == report.boxes.size());
        for (const auto& [k, width] : widths) CHECK(width == doctest::Approx(2 * std::numbers::pi).epsilon(1e-6));

        int clustered = 0;
        for (const auto& row : parse_tsv(plot_series(report, "frequency-count"))) clustered += std::stoi(row[1]);
        CHECK(clustered == report.clustered);

        int band = 0;
        for (const auto& f : report.frequencies) band += static_cast<int>(f.actual_abs.per_sum.size());
        CHECK(data_rows(plot_series(report, "error-band")) == band);
    }
    SUBCASE("tables") {
        CHECK(data_rows(spectrum_table(report)) == cfg.d_mlp);
        int expected = 0;
        for (const auto& f : report.frequencies) expected += static_cast<int>(f.bounds.size());
        CHECK(data_rows(bound_table(report)) == expected);
    }
}

TEST_CASE("training cache") {
    auto cfg = testing::small_config();
    cfg.epochs = 3;
    const auto dir = std::filesystem::temp_directory_path() / "pizzaquad_test_cache";
    std::filesystem::remove_all(dir);
    const auto first = train_or_load(cfg, dir);
    CHECK(!first.from_cache);
    CHECK(std::filesystem::exists(first.path));
    const auto second = train_or_load(cfg, dir);
    CHECK(second.from_cache);
    CHECK(second.weights == first.weights);
    REQUIRE(first.train_seconds);
    REQUIRE(second.train_seconds);
    CHECK(*second.train_seconds == doctest::Approx(*first.train_seconds));

    // A file under the right name but for another config is rejected.
    auto other = cfg;
    other.epochs = 4;
    std::filesystem::copy_file(first.path, dir / (config_hash(other) + ".json"));
    CHECK_THROWS_AS(train_or_load(other, dir), std::runtime_error);
    std::filesystem::remove_all(dir);
}
