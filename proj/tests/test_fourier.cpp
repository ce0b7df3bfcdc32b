#include "doctest.h"
#include "test_support.hpp"

#include "pizzaquad/fourier.hpp"

#include <cmath>
#include <numbers>
#include <set>

using namespace pizzaquad;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Vector tone(int p, int k, double amplitude, double phase, double offset = 0.0) {
    Vector v(p);
    for (int t = 0; t < p; ++t) v(t) = offset + amplitude * std::cos(kTwoPi * k * t / p + phase);
    return v;
}

// Neuron i gets a pure tone at freq_in[i] on the input side and freq_out[i] on the output side.
std::vector<NeuronSpectrum> synthetic_spectra(int p, const std::vector<int>& freq_in, const std::vector<int>& freq_out,
                                              const std::vector<double>& phi, const std::vector<double>& psi) {
    const auto n = static_cast<Eigen::Index>(freq_in.size());
    TokenTable table;
    table.table.resize(p, n);
    table.constant = Vector::Zero(n);
    Matrix logit(p, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(i);
        table.table.col(i) = tone(p, freq_in[s], 1.0 + 0.01 * static_cast<double>(i), phi[s]);
        logit.col(i) = tone(p, freq_out[s], 0.5, psi[s]);
    }
    return neuron_spectra(table, logit);
}

}  // namespace

TEST_CASE("Fourier basis is orthonormal") {
    for (int p : {3, 7, 59}) {
        const FourierBasis basis(p);
        const Matrix gram = basis.vectors().transpose() * basis.vectors();
        CHECK((gram - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(basis.frequency_count() == (p - 1) / 2);
    }
    CHECK_THROWS_AS(FourierBasis(8), std::invalid_argument);
}

TEST_CASE("frequency folding and angle wrapping") {
    CHECK(fold_frequency(24, 59) == 24);
    CHECK(fold_frequency(44, 59) == 15);
    CHECK(fold_frequency(-3, 59) == 3);
    CHECK(fold_frequency(59, 59) == 0);
    CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("single tone is recovered exactly") {
    const int p = 59;
    const FourierBasis basis(p);
    const auto s = spectrum_of(basis, tone(p, 12, 2.5, 0.7));
    REQUIRE(s.primary);
    CHECK(*s.primary == 12);
    CHECK(s.amplitude[12] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(std::abs(s.phase[12] - 0.7) < 1e-9);
    for (int k = 1; k <= basis.frequency_count(); ++k)
        if (k != 12) CHECK(s.amplitude[static_cast<std::size_t>(k)] < 1e-9);
    CHECK(s.variance_fraction[12] == doctest::Approx(1.0));

    const auto negative = spectrum_of(basis, tone(p, 5, 1.0, -2.0));
    CHECK(std::abs(negative.phase[5] + 2.0) < 1e-9);
}

TEST_CASE("Parseval and variance fractions") {
    const int p = 59;
    const FourierBasis basis(p);
    std::mt19937 rng(1);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 10; ++trial) {
        Vector v(p);
        for (int t = 0; t < p; ++t) v(t) = normal(rng);
        const auto s = spectrum_of(basis, v);
        double energy = s.dc_energy;
        double fractions = 0.0;
        for (int k = 1; k <= basis.frequency_count(); ++k) {
            energy += s.energy[static_cast<std::size_t>(k)];
            fractions += s.variance_fraction[static_cast<std::size_t>(k)];
            CHECK(s.amplitude[static_cast<std::size_t>(k)] >= 0.0);
            CHECK(s.phase[static_cast<std::size_t>(k)] > -std::numbers::pi);
            CHECK(s.phase[static_cast<std::size_t>(k)] <= std::numbers::pi);
            // amplitude^2 * p / 2 is the energy of r cos(wt + phi)
            CHECK(s.energy[static_cast<std::size_t>(k)] ==
                  doctest::Approx(s.amplitude[static_cast<std::size_t>(k)] * s.amplitude[static_cast<std::size_t>(k)] * p / 2));
        }
        CHECK(energy == doctest::Approx(v.squaredNorm()).epsilon(1e-9));
        CHECK(fractions <= 1.0 + 1e-9);
    }
}

TEST_CASE("phase extraction is shift-equivariant") {
    const int p = 59;
    const FourierBasis basis(p);
    std::mt19937 rng(2);
    std::normal_distribution<double> normal;
    Vector v(p);
    for (int t = 0; t < p; ++t) v(t) = normal(rng);
    const auto base = spectrum_of(basis, v);
    for (int delta : {1, 7, 30}) {
        Vector shifted(p);
        // shifted(t) = v(t + delta): phase advances by w * delta
        for (int t = 0; t < p; ++t) shifted(t) = v((t + delta) % p);
        const auto s = spectrum_of(basis, shifted);
        for (int k = 1; k <= basis.frequency_count(); ++k) {
            const auto kk = static_cast<std::size_t>(k);
            CHECK(s.amplitude[kk] == doctest::Approx(base.amplitude[kk]).epsilon(1e-9));
            CHECK(std::abs(wrap_angle(s.phase[kk] - base.phase[kk] - kTwoPi * k * delta / p)) < 1e-9);
        }
    }
}

TEST_CASE("constant token functions are unclustered") {
    const int p = 11;
    TokenTable table;
    table.table = Matrix::Constant(p, 2, 3.0);
    table.table.col(1) = tone(p, 2, 1.0, 0.3);
    table.constant = Vector::Zero(2);
    const auto spectra = neuron_spectra(table, Matrix::Ones(p, 2));
    CHECK(!spectra[0].primary_freq);
    REQUIRE(spectra[1].primary_freq);
    const auto clusters = cluster_by_frequency(spectra);
    CHECK(clusters.unclustered == std::vector<int>{0});
}

TEST_CASE("token table reproduces the model's pre-activations") {
    const auto cfg = testing::small_config(13);
    const auto w = testing::random_weights(cfg, 21);
    const TokenTable table = ov_token_table(w, cfg.p);
    std::mt19937 rng(4);
    std::uniform_int_distribution<int> tok(0, cfg.p - 1);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int a = tok(rng), b = tok(rng);
        const Vector pre = forward(w, cfg.p, a, b, true).activations->pre;
        const Vector rebuilt = 0.5 * table.table.row(a).transpose() + 0.5 * table.table.row(b).transpose() + table.constant;
        worst = std::max(worst, (pre - rebuilt).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);

    auto silent = w;
    silent.W_in.setZero();
    CHECK(ov_token_table(silent, cfg.p).table.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("clustering is a partition and flags mismatches") {
    const int p = 59;
    std::vector<int> fin, fout;
    std::vector<double> phi, psi;
    for (int i = 0; i < 60; ++i) {
        const int k = i < 30 ? 12 : 21;
        fin.push_back(k);
        fout.push_back(k);
        phi.push_back(-3.0 + 0.1 * i);
        psi.push_back(wrap_angle(2 * phi.back()));
    }
    // Five neurons read frequency 12 but write frequency 5.
    const std::set<int> broken{2, 9, 17, 33, 50};
    for (int i : broken) fout[static_cast<std::size_t>(i)] = 5;
    const auto spectra = synthetic_spectra(p, fin, fout, phi, psi);
    const auto result = cluster_by_frequency(spectra);

    std::multiset<int> seen(result.unclustered.begin(), result.unclustered.end());
    for (const auto& c : result.clusters)
        for (const auto& m : c.members) seen.insert(m.neuron);
    CHECK(seen.size() == 60);
    CHECK(std::set<int>(seen.begin(), seen.end()).size() == 60);

    CHECK(std::set<int>(result.mismatched.begin(), result.mismatched.end()) == broken);
    CHECK(result.key_freqs == std::vector<int>{12, 21});
    for (const auto& c : result.clusters)
        for (std::size_t i = 1; i < c.members.size(); ++i) CHECK(c.members[i - 1].phi < c.members[i].phi);
}

TEST_CASE("single-frequency model forms one cluster") {
    const int p = 59, n = 40;
    std::vector<int> f(n, 7);
    std::vector<double> phi, psi;
    for (int i = 0; i < n; ++i) {
        phi.push_back(-3.1 + 6.2 * i / n);
        psi.push_back(wrap_angle(2 * phi.back()));
    }
    const auto result = cluster_by_frequency(synthetic_spectra(p, f, f, phi, psi));
    REQUIRE(result.clusters.size() == 1);
    CHECK(result.clusters[0].members.size() == static_cast<std::size_t>(n));
    CHECK(result.key_freqs == std::vector<int>{7});
}

TEST_CASE("negligible members are excluded from the surviving set") {
    FrequencyCluster c;
    c.k = 3;
    for (int i = 0; i < 4; ++i) c.members.push_back({i, 0.1 * i, 0.2 * i, 1.0, 1.0, i == 3 ? 1e-6 : 1.0, i == 3});
    CHECK(c.surviving().size() == 3);
    CHECK(c.negligible_mass() == doctest::Approx(1e-6));
    CHECK(c.total_mass() == doctest::Approx(3.0 + 1e-6));
}

TEST_CASE("phase regression") {
    FrequencyCluster c;
    c.k = 12;
    const int n = 50;
    for (int i = 0; i < n; ++i) {
        const double phi = -std::numbers::pi + (i + 0.5) * kTwoPi / n;
        c.members.push_back({i, phi, wrap_angle(2 * phi), 1.0, 1.0, 1.0, false});
    }
    const auto r = phase_regression(c);
    CHECK(r.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.max_residual < 1e-12);
    CHECK(r.slope == doctest::Approx(1.0));
    CHECK(r.mean_gap == doctest::Approx(kTwoPi / n));
    CHECK(r.gap_std < 1e-12);

    FrequencyCluster flat;
    for (int i = 0; i < 4; ++i) flat.members.push_back({i, 0.5, 1.0, 1.0, 1.0, 1.0, false});
    CHECK_THROWS_AS(phase_regression(flat), DegenerateCluster);
    FrequencyCluster small;
    small.members.resize(2);
    CHECK_THROWS_AS(phase_regression(small), DegenerateCluster);
}

TEST_CASE("expected secondary frequency folds 2k") {
    CHECK(expected_secondary(12, 59) == 24);
    CHECK(expected_secondary(22, 59) == 15);
    CHECK(expected_secondary(29, 59) == 1);
}

TEST_CASE("secondary detection on constructed neurons") {
    // Input = cos(wt + phi) + 0.3 cos(2wt + 2 phi + pi): secondary at 2k with the expected phase.
    const int p = 59, k = 22, n = 30;
    TokenTable table;
    table.table.resize(p, n);
    table.constant = Vector::Zero(n);
    Matrix logit(p, n);
    for (int i = 0; i < n; ++i) {
        const double phi = -3.0 + 0.2 * i;
        table.table.col(i) = tone(p, k, 1.0, phi) + tone(p, 2 * k, 0.3, 2 * phi + std::numbers::pi);
        logit.col(i) = tone(p, k, 1.0, 2 * phi);
    }
    const auto spectra = neuron_spectra(table, logit);
    const auto clusters = cluster_by_frequency(spectra);
    const auto report = detect_secondary(spectra, clusters, p);
    CHECK(report.matching_fraction() == doctest::Approx(1.0));
    REQUIRE(report.per_frequency.size() == 1);
    CHECK(report.per_frequency[0].expected_secondary == 15);
    CHECK(report.per_frequency[0].phase_r_squared == doctest::Approx(1.0).epsilon(1e-9));
}
