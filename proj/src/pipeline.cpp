#include "pizzaquad/pipeline.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pizzaquad {

using nlohmann::json;

namespace {

constexpr double kDecompositionTolerance = 1e-9;
constexpr double kSoundnessSlack = 1e-9;

json model_config_json(const ModelConfig& c) {
    return json{{"p", c.p},
                {"d_model", c.d_model},
                {"d_mlp", c.d_mlp},
                {"d_head", c.d_head},
                {"n_heads", c.n_heads},
                {"epochs", c.epochs},
                {"weight_decay", c.weight_decay},
                {"learning_rate", c.learning_rate},
                {"train_frac", c.train_frac},
                {"seed", c.seed}};
}

void read_model_config(const json& j, ModelConfig& c) {
    c.p = j.value("p", c.p);
    c.d_model = j.value("d_model", c.d_model);
    c.d_mlp = j.value("d_mlp", c.d_mlp);
    c.d_head = j.value("d_head", c.d_head);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.epochs = j.value("epochs", c.epochs);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.train_frac = j.value("train_frac", c.train_frac);
    c.seed = j.value("seed", c.seed);
}

// nlohmann writes NaN as null; keep that explicit.
json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json bound_json(const BoundComponents& b) {
    return json{{"k", b.k},
                {"variant", to_string(b.variant)},
                {"period", to_string(b.period)},
                {"eps_approx_int", b.eps_approx_int},
                {"eps_phi", b.eps_phi},
                {"eps_0", b.eps_0},
                {"relative_total", number(b.relative_total)},
                {"absolute_only", b.absolute_only}};
}

json error_json(const QuadratureError& e) {
    return json{{"variant", to_string(e.variant)},
                {"uses_psi", e.uses_psi},
                {"max_abs", e.max_abs},
                {"max_rel", number(e.max_rel)},
                {"mean_rel", number(e.mean_rel)}};
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

const QuadratureError& actual_for(const FrequencyReport& f, Variant v) {
    return v == Variant::Relu ? f.actual_relu : f.actual_abs;
}

double psi_near_twice_phi(double phi, double psi) { return 2.0 * phi + wrap_angle(psi - 2.0 * phi); }

}  // namespace

void PipelineConfig::validate() const {
    model.validate();
    if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
    if (out_dir.empty()) throw std::invalid_argument("output directory is empty");
    if (variants.empty()) throw std::invalid_argument("no variant selected");
    if (periods.empty()) throw std::invalid_argument("no period selected");
    if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path.string());
    PipelineConfig cfg;
    try {
        const json j = json::parse(in);
        if (j.contains("model")) read_model_config(j["model"], cfg.model);
        if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
        if (j.contains("variants")) {
            cfg.variants.clear();
            for (const auto& v : j["variants"]) cfg.variants.push_back(parse_variant(v.get<std::string>()));
        }
        if (j.contains("periods")) {
            cfg.periods.clear();
            for (const auto& v : j["periods"]) cfg.periods.push_back(parse_period(v.get<std::string>()));
        }
        cfg.jobs = j.value("jobs", cfg.jobs);
    } catch (const json::exception& e) {
        throw std::invalid_argument("bad config " + path.string() + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string config_hash(const ModelConfig& cfg) {
    const std::string canonical = model_config_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SeedFacts AnalysisReport::facts() const {
    SeedFacts f;
    f.seed = config.seed;
    f.accuracy = accuracy;
    f.key_freqs = key_freqs;
    f.mismatched = mismatched;
    for (const auto& fr : frequencies) {
        f.phase_r_squared.push_back(fr.phase ? fr.phase->r_squared : 0.0);
        f.mean_gap.push_back(fr.phase ? fr.phase->mean_gap : 0.0);
        f.gap_std.push_back(fr.phase ? fr.phase->gap_std : 0.0);
        f.actual_rel.push_back(fr.actual_abs.max_rel);
        double bound = std::numeric_limits<double>::quiet_NaN();
        for (const auto& b : fr.bounds)
            if (b.variant == Variant::Abs && b.period == Period::Full) bound = b.relative_total;
        f.bound_rel.push_back(bound);
        f.baseline.push_back(baseline(fr.k, config.p, Variant::Abs));
    }
    return f;
}

const RegressionResult* AnalysisReport::regression(RegressionTarget target, LogitScope scope) const {
    for (const auto& r : regressions)
        if (r.target == target && r.scope == scope) return &r;
    return nullptr;
}

AnalysisReport analyze(const ModelConfig& cfg, const ModelWeights& w, const AnalysisOptions& options) {
    cfg.validate();
    w.check_shapes(cfg);
    const int p = cfg.p;
    AnalysisReport r;
    r.config = cfg;
    r.accuracy = evaluate(w, p, all_pairs(p)).accuracy;

    const TokenTable table = ov_token_table(w, p);
    r.spectra = neuron_spectra(table, w, p);
    r.clusters = cluster_by_frequency(r.spectra, options.clustering);
    r.key_freqs = r.clusters.key_freqs;
    r.unclustered = static_cast<int>(r.clusters.unclustered.size());
    r.mismatched = static_cast<int>(r.clusters.mismatched.size());
    r.ties = static_cast<int>(r.clusters.ties.size());
    int passing = 0;
    for (const auto& ns : r.spectra) {
        if (!ns.primary_freq) continue;
        ++r.clustered;
        if (ns.input.variance_fraction[*ns.primary_freq] > 0.9) ++passing;
    }
    r.variance_pass_fraction = r.clustered ? static_cast<double>(passing) / r.clustered : 0.0;

    for (int k : r.key_freqs) {
        const FrequencyCluster& cluster = *r.clusters.find(k);
        FrequencyReport fr;
        fr.k = k;
        fr.members = static_cast<int>(cluster.members.size());
        fr.surviving = static_cast<int>(cluster.surviving().size());
        fr.total_mass = cluster.total_mass();
        fr.negligible_mass = cluster.negligible_mass();
        try {
            fr.phase = phase_regression(cluster);
        } catch (const DegenerateCluster& e) {
            fr.note = e.what();
        }
        try {
            const BoxScheme boxes = build_boxes(cluster, p);
            for (Variant v : options.variants)
                for (Period per : options.periods) fr.bounds.push_back(bound_report(boxes, v, per));
            fr.actual_abs = actual_quadrature_error(boxes, Variant::Abs, true);
            fr.actual_abs_ideal = actual_quadrature_error(boxes, Variant::Abs, false);
            fr.actual_relu = actual_quadrature_error(boxes, Variant::Relu, true);
            for (const auto& b : fr.bounds) {
                const double actual = actual_for(fr, b.variant).max_abs;
                if (actual > b.eps_approx_int + b.eps_phi + kSoundnessSlack) {
                    fr.sound = false;
                    r.soundness_ok = false;
                    r.warnings.push_back("bound violated at k=" + std::to_string(k) + " (" + to_string(b.variant) +
                                         ", " + to_string(b.period) + ")");
                }
            }
            r.boxes.push_back(boxes);
        } catch (const InvalidCluster& e) {
            fr.note = e.what();
        }
        r.frequencies.push_back(std::move(fr));
    }

    const LogitComponents parts = logit_components(w, p);
    r.decomposition_max_error = (parts.total() - all_logits(w, p)).cwiseAbs().maxCoeff();
    r.decomposition_ok = r.decomposition_max_error <= kDecompositionTolerance;
    if (!r.decomposition_ok) r.warnings.push_back("logit decomposition does not reproduce the logits");

    if (!r.key_freqs.empty()) {
        r.regressions = regress_logits(parts, p, r.key_freqs);
        const auto id = identity_component(w, p, parts, r.key_freqs);
        r.identity = id.coefficients;
        r.identity_reconstruction_r_squared = id.reconstruction_r_squared;
        r.secondary_fit = secondary_contribution(parts.abs, p, r.key_freqs);
    }
    r.secondary = detect_secondary(r.spectra, r.clusters, p);

    // Statistical expectations only warn.
    if (r.accuracy < 1.0) r.warnings.push_back("accuracy on all pairs is " + fmt(r.accuracy));
    if (r.key_freqs.size() < 3 || r.key_freqs.size() > 6)
        r.warnings.push_back(std::to_string(r.key_freqs.size()) + " key frequencies");
    if (r.variance_pass_fraction < 0.9)
        r.warnings.push_back("only " + fmt(r.variance_pass_fraction) + " of clustered neurons have share > 0.9");
    if (r.mismatched > 0) r.warnings.push_back(std::to_string(r.mismatched) + " neurons mismatch input/output frequency");
    for (const auto& fr : r.frequencies) {
        if (fr.phase && fr.phase->r_squared <= 0.9)
            r.warnings.push_back("phase regression R^2 " + fmt(fr.phase->r_squared) + " at k=" + std::to_string(fr.k));
        for (const auto& b : fr.bounds)
            if (b.variant == Variant::Abs && !(b.relative_total < 1.0))
                r.warnings.push_back("vacuous abs bound at k=" + std::to_string(fr.k) + " (" + to_string(b.period) + ")");
    }
    return r;
}

std::string report_json(const AnalysisReport& r) {
    json j;
    j["config"] = model_config_json(r.config);
    j["accuracy"] = r.accuracy;
    j["key_freqs"] = r.key_freqs;
    j["neurons"] = {{"clustered", r.clustered},
                    {"unclustered", r.unclustered},
                    {"mismatched", r.mismatched},
                    {"ties", r.ties},
                    {"variance_pass_fraction", r.variance_pass_fraction}};
    json freqs = json::array();
    for (const auto& f : r.frequencies) {
        json fj{{"k", f.k},
                {"members", f.members},
                {"surviving", f.surviving},
                {"total_mass", f.total_mass},
                {"negligible_mass", f.negligible_mass},
                {"sound", f.sound}};
        if (f.phase)
            fj["phase_regression"] = {{"n", f.phase->n},
                                      {"slope", f.phase->slope},
                                      {"intercept", f.phase->intercept},
                                      {"r_squared", f.phase->r_squared},
                                      {"max_residual", f.phase->max_residual},
                                      {"max_abs_deviation", f.phase->max_abs_deviation},
                                      {"mean_gap", f.phase->mean_gap},
                                      {"gap_std", f.phase->gap_std}};
        json bounds = json::array();
        for (const auto& b : f.bounds) bounds.push_back(bound_json(b));
        fj["bounds"] = bounds;
        if (!f.bounds.empty())
            fj["actual"] = {error_json(f.actual_abs), error_json(f.actual_abs_ideal), error_json(f.actual_relu)};
        if (!f.note.empty()) fj["note"] = f.note;
        freqs.push_back(fj);
    }
    j["frequencies"] = freqs;
    json regs = json::array();
    for (const auto& g : r.regressions)
        regs.push_back({{"target", to_string(g.target)},
                        {"scope", to_string(g.scope)},
                        {"r_squared", g.r_squared},
                        {"freqs", g.freqs},
                        {"coefficients", g.coefficients}});
    j["regressions"] = regs;
    json ids = json::array();
    for (const auto& c : r.identity) ids.push_back({{"k", c.k}, {"C", c.c}, {"D", c.d}, {"E", c.e}});
    j["identity_component"] = {{"coefficients", ids}, {"reconstruction_r_squared", r.identity_reconstruction_r_squared}};
    json sec = json::array();
    for (const auto& s : r.secondary.per_frequency)
        sec.push_back({{"k", s.k},
                       {"expected_secondary", s.expected_secondary},
                       {"members", s.members},
                       {"matching", s.matching},
                       {"phase_r_squared", s.phase_r_squared}});
    j["secondary"] = {{"per_frequency", sec},
                      {"matching_fraction", r.secondary.matching_fraction()},
                      {"fit",
                       {{"freqs", r.secondary_fit.freqs},
                        {"pizza_coefficients", r.secondary_fit.pizza_coefficients},
                        {"template_coefficients", r.secondary_fit.template_coefficients},
                        {"r_squared_pizza_only", r.secondary_fit.r_squared_pizza_only},
                        {"r_squared_with_template", r.secondary_fit.r_squared_with_template},
                        {"contribution_at_pizza_gap", r.secondary_fit.contribution_at_pizza_gap},
                        {"compensates", r.secondary_fit.compensates()}}}};
    j["decomposition_max_error"] = r.decomposition_max_error;
    j["checks"] = {{"soundness", r.soundness_ok}, {"decomposition", r.decomposition_ok}};

    const SeedFacts f = r.facts();
    const SeedFlags flags = seed_flags(f);
    json facts{{"seed", f.seed},
               {"accuracy", f.accuracy},
               {"key_freqs", f.key_freqs},
               {"mismatched", f.mismatched},
               {"phase_r_squared", f.phase_r_squared},
               {"mean_gap", f.mean_gap},
               {"gap_std", f.gap_std},
               {"baseline", f.baseline}};
    json actual = json::array(), bound = json::array();
    for (double x : f.actual_rel) actual.push_back(number(x));
    for (double x : f.bound_rel) bound.push_back(number(x));
    facts["actual_rel"] = actual;
    facts["bound_rel"] = bound;
    j["facts"] = facts;
    j["flags"] = {{"perfect_accuracy", flags.perfect_accuracy},
                  {"frequencies_match", flags.frequencies_match},
                  {"phase_regression", flags.phase_regression},
                  {"uniform_gaps", flags.uniform_gaps},
                  {"small_errors", flags.small_errors},
                  {"good", flags.good()}};
    j["warnings"] = r.warnings;
    return j.dump(2) + "\n";
}

SeedFacts facts_from_report_json(const std::string& text) {
    SeedFacts f;
    try {
        const json j = json::parse(text).at("facts");
        auto doubles = [](const json& arr) {
            std::vector<double> out;
            for (const auto& x : arr) out.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
            return out;
        };
        f.seed = j.at("seed").get<std::uint64_t>();
        f.accuracy = j.at("accuracy").get<double>();
        f.key_freqs = j.at("key_freqs").get<std::vector<int>>();
        f.mismatched = j.at("mismatched").get<int>();
        f.phase_r_squared = doubles(j.at("phase_r_squared"));
        f.mean_gap = doubles(j.at("mean_gap"));
        f.gap_std = doubles(j.at("gap_std"));
        f.actual_rel = doubles(j.at("actual_rel"));
        f.bound_rel = doubles(j.at("bound_rel"));
        f.baseline = doubles(j.at("baseline"));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("not an analysis report: ") + e.what());
    }
    return f;
}

std::string summary_json(const SeedSummary& s) {
    json seeds = json::array();
    for (const auto& f : s.seeds)
        seeds.push_back({{"seed", f.seed},
                         {"key_count", f.key_count},
                         {"perfect_accuracy", f.perfect_accuracy},
                         {"frequencies_match", f.frequencies_match},
                         {"phase_regression", f.phase_regression},
                         {"uniform_gaps", f.uniform_gaps},
                         {"small_errors", f.small_errors},
                         {"good", f.good()}});
    json j{{"seeds", seeds},
           {"perfect_accuracy_fraction", s.perfect_accuracy_fraction},
           {"frequency_match_fraction", s.frequency_match_fraction},
           {"phase_regression_fraction", s.phase_regression_fraction},
           {"uniform_gap_fraction", s.uniform_gap_fraction},
           {"small_error_fraction", s.small_error_fraction},
           {"good_fraction", s.good_fraction},
           {"key_count_histogram", s.key_count_histogram},
           {"median_relative_bound", number(s.median_relative_bound)},
           {"fraction_below_baseline", number(s.fraction_below_baseline)}};
    return j.dump(2) + "\n";
}

std::string bound_table(const AnalysisReport& r) {
    std::ostringstream os;
    os << "k\tvariant\tperiod\teps_approx_int\teps_phi\teps_0\trelative_total\tactual_rel\n";
    for (const auto& f : r.frequencies) {
        for (const auto& b : f.bounds) {
            os << b.k << '\t' << to_string(b.variant) << '\t' << to_string(b.period) << '\t' << fmt(b.eps_approx_int)
               << '\t' << fmt(b.eps_phi) << '\t' << fmt(b.eps_0) << '\t' << fmt(b.relative_total) << '\t'
               << fmt(actual_for(f, b.variant).max_rel) << '\n';
        }
    }
    return os.str();
}

std::string spectrum_table(const AnalysisReport& r) {
    std::ostringstream os;
    os << "neuron\tprimary\tsecondary\tr\tphi\tr_out\tpsi\tprimary_share\tsecondary_share\tdc_energy\n";
    for (const auto& ns : r.spectra) {
        os << ns.neuron << '\t';
        if (!ns.primary_freq) {
            os << "-\t-\t-\t-\t-\t-\t0\t0\t" << fmt(ns.input.dc_energy) << '\n';
            continue;
        }
        const int k = *ns.primary_freq;
        os << k << '\t' << (ns.secondary_freq ? std::to_string(*ns.secondary_freq) : "-") << '\t'
           << fmt(ns.input.amplitude[k]) << '\t' << fmt(ns.input.phase[k]) << '\t' << fmt(ns.output.amplitude[k]) << '\t'
           << fmt(ns.output.phase[k]) << '\t' << fmt(ns.input.variance_fraction[k]) << '\t'
           << fmt(ns.secondary_freq ? ns.input.variance_fraction[*ns.secondary_freq] : 0.0) << '\t'
           << fmt(ns.input.dc_energy) << '\n';
    }
    return os.str();
}

const std::vector<std::string>& figure_ids() {
    static const std::vector<std::string> ids{"rectangles",  "phase-scatter",   "secondary-phase",
                                              "error-band",  "variance-histogram", "frequency-count"};
    return ids;
}

std::string plot_series(const AnalysisReport& r, const std::string& figure) {
    std::ostringstream os;
    const int p = r.config.p;
    if (figure == "rectangles") {
        os << "k\tlo\thi\tphi\theight\n";
        for (const auto& b : r.boxes) {
            const IntegrandSpec spec = make_spec(Variant::Abs, b.k, p, 0, 0, 0);
            for (const auto& row : box_plot_series(b, spec))
                os << b.k << '\t' << fmt(row.lo) << '\t' << fmt(row.hi) << '\t' << fmt(row.phi) << '\t'
                   << fmt(row.height) << '\n';
        }
    } else if (figure == "phase-scatter") {
        os << "k\tneuron\tphi\tpsi\tpsi_near_2phi\tmass\tnegligible\n";
        for (int k : r.key_freqs)
            for (const auto& m : r.clusters.find(k)->members)
                os << k << '\t' << m.neuron << '\t' << fmt(m.phi) << '\t' << fmt(m.psi) << '\t'
                   << fmt(psi_near_twice_phi(m.phi, m.psi)) << '\t' << fmt(m.mass) << '\t' << m.negligible << '\n';
    } else if (figure == "secondary-phase") {
        os << "k\tneuron\tsecondary\tphi\ttheta\ttarget\n";
        for (int k : r.key_freqs) {
            const int k2 = expected_secondary(k, p);
            if (k2 == 0) continue;
            const bool folded = (2 * k) % p != k2;
            for (const auto& m : r.clusters.find(k)->surviving()) {
                const auto& ns = r.spectra[static_cast<std::size_t>(m.neuron)];
                const double theta = folded ? -ns.input.phase[k2] : ns.input.phase[k2];
                const double target = 2.0 * m.phi + std::numbers::pi;
                os << k << '\t' << m.neuron << '\t' << k2 << '\t' << fmt(m.phi) << '\t'
                   << fmt(target + wrap_angle(theta - target)) << '\t' << fmt(target) << '\n';
            }
        }
    } else if (figure == "error-band") {
        os << "k\ta_plus_b\tactual_rel\tbound_rel\n";
        for (const auto& f : r.frequencies) {
            double bound = std::numeric_limits<double>::quiet_NaN();
            for (const auto& b : f.bounds)
                if (b.variant == Variant::Abs && b.period == Period::Full) bound = b.relative_total;
            for (std::size_t x = 0; x < f.actual_abs.per_sum.size(); ++x)
                os << f.k << '\t' << x << '\t' << fmt(f.actual_abs.per_sum[x]) << '\t' << fmt(bound) << '\n';
        }
    } else if (figure == "variance-histogram") {
        constexpr int bins = 20;
        std::vector<int> counts(bins, 0);
        for (const auto& ns : r.spectra) {
            const double share = ns.primary_freq ? ns.input.variance_fraction[*ns.primary_freq] : 0.0;
            ++counts[static_cast<std::size_t>(std::clamp(static_cast<int>(share * bins), 0, bins - 1))];
        }
        os << "lo\thi\tcount\n";
        for (int i = 0; i < bins; ++i)
            os << fmt(static_cast<double>(i) / bins) << '\t' << fmt(static_cast<double>(i + 1) / bins) << '\t'
               << counts[static_cast<std::size_t>(i)] << '\n';
    } else if (figure == "frequency-count") {
        os << "k\tneurons\tkey\n";
        for (const auto& c : r.clusters.clusters)
            os << c.k << '\t' << c.members.size() << '\t'
               << (std::find(r.key_freqs.begin(), r.key_freqs.end(), c.k) != r.key_freqs.end()) << '\n';
    } else {
        throw std::invalid_argument("unknown figure '" + figure + "'");
    }
    return os.str();
}

CachedTraining train_or_load(const ModelConfig& cfg, const std::filesystem::path& cache_dir,
                             const std::function<void(const EpochStats&)>& progress) {
    CachedTraining out;
    out.path = cache_dir / (config_hash(cfg) + ".json");
    if (std::filesystem::exists(out.path)) {
        auto [stored, weights] = load_weights(out.path);
        if (!(stored == cfg)) throw std::runtime_error("cached weights at " + out.path.string() + " do not match the config");
        out.weights = std::move(weights);
        out.from_cache = true;
        std::ifstream timing(out.path.string() + ".seconds");
        double seconds = 0.0;
        if (timing >> seconds) out.train_seconds = seconds;
        return out;
    }
    TrainOptions options;
    options.on_epoch = progress;
    const auto start = std::chrono::steady_clock::now();
    out.weights = train(cfg, options).weights;
    out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::filesystem::create_directories(cache_dir);
    std::ofstream(out.path.string() + ".seconds") << *out.train_seconds << '\n';
    // Write then rename so an interrupted run never leaves a partial cache entry.
    const auto tmp = out.path.string() + ".tmp";
    save_weights(tmp, cfg, out.weights);
    std::filesystem::rename(tmp, out.path);
    return out;
}

}  // namespace pizzaquad
