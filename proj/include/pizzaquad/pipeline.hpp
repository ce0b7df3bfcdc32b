#pragma once

// Train -> analyze -> bound -> validate for a list of seeds, with reports on
// disk and a weights cache keyed by the training config.

#include "pizzaquad/validation.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pizzaquad {

struct PipelineConfig {
    ModelConfig model;  // model.seed is ignored; seeds come from the list
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path out_dir = "pizzaquad-out";
    std::vector<Variant> variants{Variant::Abs, Variant::Relu};
    std::vector<Period> periods{Period::Full, Period::Half};
    int jobs = 1;

    /// Throws std::invalid_argument.
    void validate() const;
};

/// Reads a JSON config: {"model": {...}, "seeds": [...], "out": "...",
/// "variants": [...], "periods": [...], "jobs": n}. Missing keys keep defaults.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Hex FNV-1a hash of the canonical training config (seed included).
std::string config_hash(const ModelConfig& cfg);

struct FrequencyReport {
    int k = 0;
    int members = 0;
    int surviving = 0;
    double total_mass = 0.0;
    double negligible_mass = 0.0;
    std::optional<PhaseRegression> phase;
    std::vector<BoundComponents> bounds;
    QuadratureError actual_abs;         // with psi, what the bound covers
    QuadratureError actual_abs_ideal;   // psi replaced by 2 phi
    QuadratureError actual_relu;
    bool sound = true;
    std::string note;                   // why bounds are missing, if they are
};

struct AnalysisReport {
    ModelConfig config;
    double accuracy = 0.0;  // on all p^2 pairs
    std::vector<int> key_freqs;
    int clustered = 0;
    int unclustered = 0;
    int mismatched = 0;
    int ties = 0;
    double variance_pass_fraction = 0.0;  // clustered neurons with primary share > 0.9
    std::vector<FrequencyReport> frequencies;
    std::vector<RegressionResult> regressions;
    std::vector<IdentityCoefficients> identity;
    double identity_reconstruction_r_squared = 0.0;
    SecondaryReport secondary;
    SecondaryFit secondary_fit;
    double decomposition_max_error = 0.0;
    bool soundness_ok = true;
    bool decomposition_ok = true;
    std::vector<std::string> warnings;

    // Kept for plot series and spectrum dumps; not serialized.
    std::vector<NeuronSpectrum> spectra;
    ClusteringResult clusters;
    std::vector<BoxScheme> boxes;

    SeedFacts facts() const;
    const RegressionResult* regression(RegressionTarget target, LogitScope scope) const;
};

struct AnalysisOptions {
    std::vector<Variant> variants{Variant::Abs, Variant::Relu};
    std::vector<Period> periods{Period::Full, Period::Half};
    ClusteringOptions clustering;
};

AnalysisReport analyze(const ModelConfig& cfg, const ModelWeights& w, const AnalysisOptions& options = {});

std::string report_json(const AnalysisReport& report);
/// Reads back the fields the multi-seed summary needs.
SeedFacts facts_from_report_json(const std::string& text);
std::string summary_json(const SeedSummary& summary);

/// One row per (frequency, variant, period).
std::string bound_table(const AnalysisReport& report);
/// One row per neuron: primary/secondary frequency, r, phi, r', psi, shares.
std::string spectrum_table(const AnalysisReport& report);

const std::vector<std::string>& figure_ids();
/// Tab-separated plot data. Throws std::invalid_argument for unknown ids.
std::string plot_series(const AnalysisReport& report, const std::string& figure);

/// Loads cached weights for cfg or trains and caches them.
struct CachedTraining {
    ModelWeights weights;
    std::filesystem::path path;
    bool from_cache = false;
    /// Wall-clock training time, recorded next to the cache entry.
    std::optional<double> train_seconds;
};
CachedTraining train_or_load(const ModelConfig& cfg, const std::filesystem::path& cache_dir,
                             const std::function<void(const EpochStats&)>& progress = {});

}  // namespace pizzaquad
