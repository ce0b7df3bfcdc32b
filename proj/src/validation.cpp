#include "pizzaquad/validation.hpp"

#include "factored.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

namespace pizzaquad {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double omega(int k, int p) { return kTwoPi * k / p; }

double clock_feature(int k, int p, int a, int b, int c) { return std::cos(omega(k, p) * (a + b - c)); }

double pizza_feature(int k, int p, int a, int b, int c) {
    return std::abs(std::cos(0.5 * omega(k, p) * (a - b))) * std::cos(omega(k, p) * (a + b - c));
}

using Feature = std::function<double(int a, int b, int c)>;

struct LeastSquares {
    Vector coefficients;
    double r_squared = 0.0;
};

// Centred p x p^2 targets against features over every (a, b, c), streamed so
// the p^3 design matrix never exists.
LeastSquares fit_features(const Matrix& centred, int p, const std::vector<Feature>& features) {
    const auto m = static_cast<Eigen::Index>(features.size());
    Matrix xtx = Matrix::Zero(m, m);
    Vector xty = Vector::Zero(m);
    double yy = 0.0;
    Vector f(m);
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
            const auto col = centred.col(a * p + b);
            for (int c = 0; c < p; ++c) {
                for (Eigen::Index j = 0; j < m; ++j) f(j) = features[static_cast<std::size_t>(j)](a, b, c);
                xtx.selfadjointView<Eigen::Lower>().rankUpdate(f);
                xty += col(c) * f;
                yy += col(c) * col(c);
            }
        }
    }
    xtx = xtx.selfadjointView<Eigen::Lower>();
    LeastSquares out;
    out.coefficients = m > 0 ? Vector(xtx.ldlt().solve(xty)) : Vector();
    double ss_res = 0.0;
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
            const auto col = centred.col(a * p + b);
            for (int c = 0; c < p; ++c) {
                double pred = 0.0;
                for (Eigen::Index j = 0; j < m; ++j)
                    pred += out.coefficients(j) * features[static_cast<std::size_t>(j)](a, b, c);
                ss_res += (col(c) - pred) * (col(c) - pred);
            }
        }
    }
    out.r_squared = yy > 0.0 ? 1.0 - ss_res / yy : 1.0;
    return out;
}

std::vector<Feature> features_for(RegressionTarget target, int p, const std::vector<int>& freqs) {
    std::vector<Feature> out;
    for (int k : freqs) {
        if (target == RegressionTarget::Clock)
            out.push_back([k, p](int a, int b, int c) { return clock_feature(k, p, a, b, c); });
        else
            out.push_back([k, p](int a, int b, int c) { return pizza_feature(k, p, a, b, c); });
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

QuadratureError actual_quadrature_error(const BoxScheme& boxes, Variant variant, bool uses_psi) {
    QuadratureError out;
    out.k = boxes.k;
    out.variant = variant;
    out.uses_psi = uses_psi;
    const int p = boxes.p;
    const double w = omega(boxes.k, p);
    const double base = baseline(boxes.k, p, variant);
    out.per_sum.assign(static_cast<std::size_t>(p), 0.0);
    double sum_rel = 0.0;
    long count = 0;
    auto consider = [&](const IntegrandSpec& spec, int x) {
        const double err = std::abs(quadrature_sum(boxes, spec, uses_psi) - closed_form(spec));
        out.max_abs = std::max(out.max_abs, err);
        auto& slot = out.per_sum[static_cast<std::size_t>(x)];
        slot = std::max(slot, err);
        sum_rel += err;
        ++count;
    };
    for (int x = 0; x < p; ++x) {
        for (int c = 0; c < p; ++c) {
            IntegrandSpec spec;
            spec.variant = variant;
            spec.s = 0.5 * w * x;
            spec.t = w * c;
            if (variant == Variant::Secondary) {
                for (int y = 0; y < p; ++y) {
                    spec.u = 0.5 * w * y;
                    consider(spec, x);
                }
                continue;
            }
            // a + b and a + b + p differ by a sign flip of cos(s + phi), which
            // sigma already covers.
            for (int sigma : {1, -1}) {
                spec.sigma = sigma;
                consider(spec, x);
                if (variant == Variant::Abs) break;
            }
        }
    }
    if (base > 0.0) {
        out.max_rel = out.max_abs / base;
        out.mean_rel = sum_rel / static_cast<double>(count) / base;
        for (auto& v : out.per_sum) v /= base;
    } else {
        out.max_rel = out.mean_rel = kNaN;
    }
    return out;
}

LogitComponents logit_components(const ModelWeights& w, int p) {
    const detail::TokenFactors f(w, p);
    const auto pairs = all_pairs(p);
    const Matrix pre = f.preactivations(pairs);
    LogitComponents out;
    out.abs.noalias() = f.neuron_logit * (0.5 * pre.cwiseAbs());
    out.identity.noalias() = f.neuron_logit * (0.5 * pre);
    out.skip.resize(p, static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t n = 0; n < pairs.size(); ++n)
        out.skip.col(static_cast<Eigen::Index>(n)) = f.re + f.ra.col(pairs[n].first) + f.rb.col(pairs[n].second);
    return out;
}

std::string to_string(RegressionTarget t) { return t == RegressionTarget::Clock ? "clock" : "pizza"; }

std::string to_string(LogitScope s) {
    switch (s) {
        case LogitScope::Full: return "full";
        case LogitScope::Mlp: return "mlp";
        case LogitScope::AbsOnly: return "abs";
    }
    return "?";
}

Matrix centre_over_outputs(const Matrix& logits) {
    return logits.rowwise() - logits.colwise().mean();
}

RegressionResult regress(const Matrix& logits, int p, const std::vector<int>& freqs, RegressionTarget target) {
    const auto fit = fit_features(centre_over_outputs(logits), p, features_for(target, p, freqs));
    RegressionResult r;
    r.target = target;
    r.r_squared = fit.r_squared;
    r.freqs = freqs;
    r.coefficients.assign(fit.coefficients.data(), fit.coefficients.data() + fit.coefficients.size());
    return r;
}

std::vector<RegressionResult> regress_logits(const LogitComponents& parts, int p, const std::vector<int>& freqs) {
    std::vector<RegressionResult> out;
    const std::pair<LogitScope, Matrix> scopes[] = {
        {LogitScope::Full, parts.total()}, {LogitScope::Mlp, parts.mlp()}, {LogitScope::AbsOnly, parts.abs}};
    for (const auto& [scope, logits] : scopes) {
        for (auto target : {RegressionTarget::Clock, RegressionTarget::Pizza}) {
            auto r = regress(logits, p, freqs, target);
            r.scope = scope;
            out.push_back(std::move(r));
        }
    }
    return out;
}

IdentityComponentFit identity_component(const ModelWeights& w, int p, const LogitComponents& parts,
                                        const std::vector<int>& freqs) {
    IdentityComponentFit out;
    const TokenTable table = ov_token_table(w, p);
    const Matrix wl = w.neuron_logit_map(p);
    out.logit_id1 = 0.5 * wl * table.table.transpose();
    out.logit_id2 = 0.25 * w.W_U.topRows(p) * (w.ov_circuit() * w.W_E.leftCols(p));

    const auto abs_fit = regress(parts.abs, p, freqs, RegressionTarget::Pizza);
    const double norm = 2.0 / (static_cast<double>(p) * p);
    for (std::size_t j = 0; j < freqs.size(); ++j) {
        const int k = freqs[j];
        IdentityCoefficients co;
        co.k = k;
        co.c = abs_fit.coefficients[j];
        for (int c = 0; c < p; ++c) {
            for (int a = 0; a < p; ++a) {
                const double angle = omega(k, p) * (c - 2 * a);
                co.d += out.logit_id1(c, a) * std::cos(angle);
                co.e += out.logit_id1(c, a) * std::sin(angle);
            }
        }
        co.d *= norm;
        co.e *= norm;
        out.coefficients.push_back(co);
    }

    const Matrix centred = centre_over_outputs(parts.total());
    double ss_res = 0.0, ss_tot = 0.0;
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
            for (int c = 0; c < p; ++c) {
                double pred = 0.0;
                for (const auto& co : out.coefficients)
                    pred += (co.c * std::abs(std::cos(0.5 * omega(co.k, p) * (a - b))) +
                             co.d * std::cos(omega(co.k, p) * (b - a))) *
                            std::cos(omega(co.k, p) * (a + b - c));
                const double y = centred(c, a * p + b);
                ss_res += (y - pred) * (y - pred);
                ss_tot += y * y;
            }
        }
    }
    out.reconstruction_r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return out;
}

double secondary_template(int k, int p, int a, int b, int c) {
    return -0.5 * kPi * std::cos(omega(k, p) * (a - b)) * std::cos(omega(k, p) * (a + b - c));
}

bool SecondaryFit::compensates() const {
    if (contribution_at_pizza_gap.empty()) return false;
    return std::all_of(contribution_at_pizza_gap.begin(), contribution_at_pizza_gap.end(),
                       [](double v) { return v > 0.0; });
}

SecondaryFit secondary_contribution(const Matrix& abs_logits, int p, const std::vector<int>& freqs) {
    SecondaryFit out;
    out.freqs = freqs;
    const Matrix centred = centre_over_outputs(abs_logits);
    auto features = features_for(RegressionTarget::Pizza, p, freqs);
    out.r_squared_pizza_only = fit_features(centred, p, features).r_squared;
    for (int k : freqs) features.push_back([k, p](int a, int b, int c) { return secondary_template(k, p, a, b, c); });
    const auto joint = fit_features(centred, p, features);
    out.r_squared_with_template = joint.r_squared;
    const auto n = freqs.size();
    for (std::size_t j = 0; j < n; ++j) {
        out.pizza_coefficients.push_back(joint.coefficients(static_cast<Eigen::Index>(j)));
        const double beta = joint.coefficients(static_cast<Eigen::Index>(n + j));
        out.template_coefficients.push_back(beta);
        // a - b where the pizza factor |cos(w (a - b) / 2)| is smallest.
        const int k = freqs[j];
        int gap = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int y = 0; y < p; ++y) {
            const double v = std::abs(std::cos(0.5 * omega(k, p) * y));
            if (v < best) {
                best = v;
                gap = y;
            }
        }
        out.contribution_at_pizza_gap.push_back(beta * secondary_template(k, p, gap, 0, gap));
    }
    return out;
}

SeedFlags seed_flags(const SeedFacts& facts) {
    SeedFlags f;
    f.seed = facts.seed;
    f.key_count = static_cast<int>(facts.key_freqs.size());
    f.perfect_accuracy = facts.accuracy == 1.0;
    f.frequencies_match = facts.mismatched == 0;
    const bool any = !facts.key_freqs.empty();
    f.phase_regression = any && std::all_of(facts.phase_r_squared.begin(), facts.phase_r_squared.end(),
                                            [](double r) { return r > 0.9; });
    f.uniform_gaps = any;
    for (std::size_t i = 0; i < facts.mean_gap.size(); ++i)
        if (!(facts.mean_gap[i] > facts.gap_std[i])) f.uniform_gaps = false;
    f.small_errors = any && std::all_of(facts.actual_rel.begin(), facts.actual_rel.end(),
                                        [](double e) { return e < 0.1; });
    return f;
}

SeedSummary multi_seed_summary(const std::vector<SeedFacts>& facts) {
    if (facts.empty()) throw std::invalid_argument("multi_seed_summary needs at least one report");
    SeedSummary s;
    std::vector<double> good_bounds;
    int below = 0;
    for (const auto& fa : facts) {
        const SeedFlags f = seed_flags(fa);
        s.seeds.push_back(f);
        s.perfect_accuracy_fraction += f.perfect_accuracy;
        s.frequency_match_fraction += f.frequencies_match;
        s.phase_regression_fraction += f.phase_regression;
        s.uniform_gap_fraction += f.uniform_gaps;
        s.small_error_fraction += f.small_errors;
        s.good_fraction += f.good();
        if (static_cast<int>(s.key_count_histogram.size()) <= f.key_count)
            s.key_count_histogram.resize(static_cast<std::size_t>(f.key_count) + 1, 0);
        ++s.key_count_histogram[static_cast<std::size_t>(f.key_count)];
        if (!f.good()) continue;
        for (double b : fa.bound_rel) {
            good_bounds.push_back(b);
            if (b < 1.0) ++below;
        }
    }
    const double n = static_cast<double>(facts.size());
    for (double* v : {&s.perfect_accuracy_fraction, &s.frequency_match_fraction, &s.phase_regression_fraction,
                      &s.uniform_gap_fraction, &s.small_error_fraction, &s.good_fraction})
        *v /= n;
    s.median_relative_bound = median(good_bounds);
    s.fraction_below_baseline = good_bounds.empty() ? kNaN : below / static_cast<double>(good_bounds.size());
    return s;
}

}  // namespace pizzaquad
