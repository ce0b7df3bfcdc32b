#include "pizzaquad/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace pizzaquad {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Centered energy below this fraction of the total is treated as constant.
constexpr double kConstantTolerance = 1e-20;
}  // namespace

FourierBasis::FourierBasis(int p) : p_(p) {
    if (p < 3 || p % 2 == 0) throw std::invalid_argument("FourierBasis requires an odd modulus >= 3");
    vectors_.resize(p, p);
    vectors_.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(p)));
    const double norm = std::sqrt(2.0 / p);
    for (int k = 1; k <= frequency_count(); ++k) {
        for (int t = 0; t < p; ++t) {
            // Reduce k * t mod p first so the angle stays small and exact.
            const double angle = kTwoPi * static_cast<double>((k * t) % p) / p;
            vectors_(t, 2 * k - 1) = norm * std::cos(angle);
            vectors_(t, 2 * k) = norm * std::sin(angle);
        }
    }
}

int fold_frequency(int k, int p) {
    k = ((k % p) + p) % p;
    return std::min(k, p - k);
}

double wrap_angle(double x) {
    double y = std::remainder(x, kTwoPi);
    if (y <= -kPi) y += kTwoPi;
    return y;
}

Spectrum spectrum_of(const FourierBasis& basis, Eigen::Ref<const Vector> values) {
    const int p = basis.p();
    const int nf = basis.frequency_count();
    if (values.size() != p) throw std::invalid_argument("spectrum_of: length does not match basis");
    Spectrum s;
    s.amplitude.assign(nf + 1, 0.0);
    s.phase.assign(nf + 1, 0.0);
    s.energy.assign(nf + 1, 0.0);
    s.variance_fraction.assign(nf + 1, 0.0);

    const Vector coeffs = basis.vectors().transpose() * values;
    const double total = values.squaredNorm();
    s.dc = values.mean();
    s.dc_energy = coeffs(0) * coeffs(0);
    const double scale = std::sqrt(2.0 / p);
    double centered = 0.0;
    for (int k = 1; k <= nf; ++k) {
        const double c = coeffs(2 * k - 1);
        const double d = coeffs(2 * k);
        s.energy[k] = c * c + d * d;
        centered += s.energy[k];
        // f = A cos(wt) + B sin(wt) = r cos(wt + phi)  =>  r cos phi = A, r sin phi = -B
        const double A = scale * c;
        const double B = scale * d;
        s.amplitude[k] = std::hypot(A, B);
        s.phase[k] = s.amplitude[k] > 0.0 ? wrap_angle(std::atan2(-B, A)) : 0.0;
    }
    s.centered_energy = centered;
    if (centered <= kConstantTolerance * std::max(total, 1e-300) || centered == 0.0) return s;

    for (int k = 1; k <= nf; ++k) s.variance_fraction[k] = s.energy[k] / centered;

    // Primary and secondary by energy; strict > keeps the smaller k on ties.
    int best = 1;
    for (int k = 2; k <= nf; ++k)
        if (s.energy[k] > s.energy[best]) best = k;
    s.primary = best;
    const double rel_tie = 1e-12 * s.energy[best];
    for (int k = 1; k <= nf; ++k)
        if (k != best && std::abs(s.energy[k] - s.energy[best]) <= rel_tie) s.primary_tie = true;
    if (nf >= 2) {
        int second = best == 1 ? 2 : 1;
        for (int k = 1; k <= nf; ++k)
            if (k != best && s.energy[k] > s.energy[second]) second = k;
        s.secondary = second;
    }
    return s;
}

TokenTable ov_token_table(const ModelWeights& w, int p) {
    const Matrix ov = w.ov_circuit();
    TokenTable out;
    // table(t, i) = (W_in OV W_E t)_i
    const Matrix token_side = w.W_in * (ov * w.W_E.leftCols(p));
    out.table = token_side.transpose();
    const Vector eq = w.W_E.col(p) + w.pos.col(2);
    out.constant = w.W_in * (eq + 0.5 * ov * (w.pos.col(0) + w.pos.col(1))) + w.b_in;
    return out;
}

std::vector<NeuronSpectrum> neuron_spectra(const TokenTable& table, const Matrix& neuron_logit) {
    const int p = static_cast<int>(table.table.rows());
    if (neuron_logit.rows() != p || neuron_logit.cols() != table.table.cols())
        throw std::invalid_argument("neuron_spectra: token table and neuron-logit map disagree");
    const FourierBasis basis(p);
    std::vector<NeuronSpectrum> out(static_cast<std::size_t>(table.table.cols()));
    for (Eigen::Index i = 0; i < table.table.cols(); ++i) {
        NeuronSpectrum& ns = out[static_cast<std::size_t>(i)];
        ns.neuron = static_cast<int>(i);
        ns.input = spectrum_of(basis, table.table.col(i));
        ns.output = spectrum_of(basis, neuron_logit.col(i));
        if (!ns.input.primary) continue;
        // The constant part only shifts the neuron's threshold; a neuron whose
        // token function is mostly constant carries no frequency.
        if (ns.input.dc_energy > ns.input.energy[*ns.input.primary]) {
            ns.dc_dominated = true;
            continue;
        }
        ns.primary_freq = ns.input.primary;
        ns.secondary_freq = ns.input.secondary;
    }
    return out;
}

std::vector<NeuronSpectrum> neuron_spectra(const TokenTable& table, const ModelWeights& w, int p) {
    return neuron_spectra(table, w.neuron_logit_map(p));
}

std::vector<ClusterMember> FrequencyCluster::surviving() const {
    std::vector<ClusterMember> out;
    std::copy_if(members.begin(), members.end(), std::back_inserter(out),
                 [](const ClusterMember& m) { return !m.negligible; });
    return out;
}

double FrequencyCluster::total_mass() const {
    return std::accumulate(members.begin(), members.end(), 0.0,
                           [](double acc, const ClusterMember& m) { return acc + m.mass; });
}

double FrequencyCluster::negligible_mass() const {
    double s = 0.0;
    for (const auto& m : members)
        if (m.negligible) s += m.mass;
    return s;
}

const FrequencyCluster* ClusteringResult::find(int k) const {
    for (const auto& c : clusters)
        if (c.k == k) return &c;
    return nullptr;
}

ClusteringResult cluster_by_frequency(const std::vector<NeuronSpectrum>& spectra, const ClusteringOptions& options) {
    ClusteringResult out;
    if (spectra.empty()) return out;
    const int nf = static_cast<int>(spectra.front().input.amplitude.size()) - 1;
    std::vector<FrequencyCluster> by_k(static_cast<std::size_t>(nf + 1));
    for (int k = 0; k <= nf; ++k) by_k[static_cast<std::size_t>(k)].k = k;

    for (const auto& ns : spectra) {
        if (!ns.primary_freq) {
            out.unclustered.push_back(ns.neuron);
            continue;
        }
        const int k = *ns.primary_freq;
        if (ns.input.primary_tie) out.ties.push_back(ns.neuron);
        if (!ns.output.primary || *ns.output.primary != k) out.mismatched.push_back(ns.neuron);
        ClusterMember m;
        m.neuron = ns.neuron;
        m.phi = ns.input.phase[k];
        m.psi = ns.output.phase[k];
        m.r_in = ns.input.amplitude[k];
        m.r_out = ns.output.amplitude[k];
        m.mass = m.r_in * m.r_out;
        by_k[static_cast<std::size_t>(k)].members.push_back(m);
    }

    const double key_count = options.key_fraction * static_cast<double>(spectra.size());
    for (auto& c : by_k) {
        if (c.members.empty()) continue;
        std::sort(c.members.begin(), c.members.end(), [](const ClusterMember& x, const ClusterMember& y) {
            return x.phi != y.phi ? x.phi < y.phi : x.neuron < y.neuron;
        });
        double max_mass = 0.0;
        for (const auto& m : c.members) max_mass = std::max(max_mass, m.mass);
        for (auto& m : c.members) m.negligible = !(m.mass >= options.negligible_mass_ratio * max_mass) || max_mass == 0.0;
        if (static_cast<double>(c.members.size()) >= key_count) out.key_freqs.push_back(c.k);
        out.clusters.push_back(std::move(c));
    }
    return out;
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += r * r;
    }
    f.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return f;
}

PhaseRegression phase_regression(const FrequencyCluster& cluster) {
    const auto members = cluster.surviving();
    if (members.size() < 3) throw DegenerateCluster("phase regression needs at least 3 members");
    std::vector<double> x, y;
    for (const auto& m : members) {
        const double target = 2.0 * m.phi;
        x.push_back(target);
        y.push_back(target + wrap_angle(m.psi - target));
    }
    const bool all_equal = std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
    if (all_equal) throw DegenerateCluster("all phases equal");

    PhaseRegression r;
    r.k = cluster.k;
    r.n = static_cast<int>(members.size());
    const LineFit f = fit_line(x, y);
    r.slope = f.slope;
    r.intercept = f.intercept;
    r.r_squared = f.r_squared;
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.max_residual = std::max(r.max_residual, std::abs(y[i] - (f.slope * x[i] + f.intercept)));
        r.max_abs_deviation = std::max(r.max_abs_deviation, std::abs(y[i] - x[i]));
    }

    // members are sorted by phi already.
    std::vector<double> gaps;
    for (std::size_t i = 1; i < members.size(); ++i) gaps.push_back(members[i].phi - members[i - 1].phi);
    gaps.push_back(members.front().phi + kTwoPi - members.back().phi);
    const double n = static_cast<double>(gaps.size());
    r.mean_gap = std::accumulate(gaps.begin(), gaps.end(), 0.0) / n;
    double var = 0.0;
    for (double g : gaps) var += (g - r.mean_gap) * (g - r.mean_gap);
    r.gap_std = std::sqrt(var / n);
    return r;
}

int expected_secondary(int k, int p) { return fold_frequency(2 * k, p); }

SecondaryReport detect_secondary(const std::vector<NeuronSpectrum>& spectra, const ClusteringResult& clusters, int p) {
    SecondaryReport out;
    for (const auto& c : clusters.clusters) {
        for (const auto& m : c.members) {
            const auto& ns = spectra[static_cast<std::size_t>(m.neuron)];
            ++out.clustered_neurons;
            if (ns.secondary_freq && *ns.secondary_freq == expected_secondary(c.k, p)) ++out.matching_neurons;
        }
    }
    for (int k : clusters.key_freqs) {
        const FrequencyCluster& c = *clusters.find(k);
        SecondaryFrequencyStats st;
        st.k = k;
        st.expected_secondary = expected_secondary(k, p);
        // Folding 2k -> p - 2k conjugates the component, negating its phase.
        const bool folded = (2 * k) % p != st.expected_secondary;
        std::vector<double> x, y;
        for (const auto& m : c.surviving()) {
            const auto& ns = spectra[static_cast<std::size_t>(m.neuron)];
            ++st.members;
            if (ns.secondary_freq && *ns.secondary_freq == st.expected_secondary) ++st.matching;
            if (st.expected_secondary == 0) continue;
            double theta = ns.input.phase[st.expected_secondary];
            if (folded) theta = -theta;
            const double target = 2.0 * m.phi + kPi;
            x.push_back(target);
            y.push_back(target + wrap_angle(theta - target));
        }
        if (x.size() >= 3) st.phase_r_squared = fit_line(x, y).r_squared;
        out.per_frequency.push_back(st);
    }
    return out;
}

}  // namespace pizzaquad
