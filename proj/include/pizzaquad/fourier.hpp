#pragma once

// Amplitude-phase Fourier analysis of a trained model.
//
// Phase convention (both sides): a frequency-k component of a function f on
// Z_p is written r * cos(2 pi k t / p + phi), with r >= 0 and phi in (-pi, pi].
// Frequencies k and p - k are identified; k ranges over [1, (p - 1) / 2].

#include "pizzaquad/model.hpp"

#include <optional>
#include <vector>

namespace pizzaquad {

/// Orthonormal real Fourier basis of R^p (odd p). Column 0 is the constant
/// vector; columns 2k - 1 and 2k are the normalized cos and sin of frequency k.
class FourierBasis {
public:
    explicit FourierBasis(int p);

    int p() const { return p_; }
    int frequency_count() const { return (p_ - 1) / 2; }
    const Matrix& vectors() const { return vectors_; }
    Eigen::Ref<const Vector> constant() const { return vectors_.col(0); }
    Eigen::Ref<const Vector> cos(int k) const { return vectors_.col(2 * k - 1); }
    Eigen::Ref<const Vector> sin(int k) const { return vectors_.col(2 * k); }

private:
    int p_;
    Matrix vectors_;
};

/// Folds a frequency into [0, (p - 1) / 2].
int fold_frequency(int k, int p);
/// Wraps an angle into (-pi, pi].
double wrap_angle(double x);

/// Per-frequency decomposition of one real function on Z_p.
struct Spectrum {
    double dc = 0.0;                       // mean value
    double dc_energy = 0.0;                // squared norm of the constant part
    double centered_energy = 0.0;          // squared norm minus dc_energy
    std::vector<double> amplitude;         // index k, entry 0 unused
    std::vector<double> phase;             // index k, entry 0 unused
    std::vector<double> energy;            // squared norm of the frequency-k part
    std::vector<double> variance_fraction; // energy / centered_energy

    /// Largest two frequencies by energy (smaller k wins ties). Absent when the
    /// function is numerically constant.
    std::optional<int> primary;
    std::optional<int> secondary;
    bool primary_tie = false;
};

Spectrum spectrum_of(const FourierBasis& basis, Eigen::Ref<const Vector> values);

/// Per-token contribution of each neuron's pre-activation. For every input,
/// pre(a, b)_i = table(a, i) / 2 + table(b, i) / 2 + constant(i).
struct TokenTable {
    Matrix table;     // p x d_mlp
    Vector constant;  // d_mlp
};

TokenTable ov_token_table(const ModelWeights& w, int p);

struct NeuronSpectrum {
    int neuron = 0;
    Spectrum input;   // of column `neuron` of the token table
    Spectrum output;  // of column `neuron` of the neuron-logit map
    /// Input primary frequency; absent for constant or DC-dominated neurons.
    std::optional<int> primary_freq;
    std::optional<int> secondary_freq;
    bool dc_dominated = false;

    /// r'(k) * r(k).
    double mass(int k) const { return output.amplitude[k] * input.amplitude[k]; }
};

std::vector<NeuronSpectrum> neuron_spectra(const TokenTable& table, const Matrix& neuron_logit);
std::vector<NeuronSpectrum> neuron_spectra(const TokenTable& table, const ModelWeights& w, int p);

struct ClusterMember {
    int neuron = 0;
    double phi = 0.0;       // input phase at the cluster frequency
    double psi = 0.0;       // output phase at the cluster frequency
    double r_in = 0.0;
    double r_out = 0.0;
    double mass = 0.0;      // r_out * r_in
    bool negligible = false;
};

struct FrequencyCluster {
    int k = 0;
    /// Sorted by (phi, neuron).
    std::vector<ClusterMember> members;

    std::vector<ClusterMember> surviving() const;
    double total_mass() const;
    double negligible_mass() const;
};

struct ClusteringOptions {
    /// A frequency is key when it owns at least this fraction of neurons.
    double key_fraction = 0.05;
    /// Members below this fraction of the cluster's largest mass are negligible.
    double negligible_mass_ratio = 1e-3;
};

struct ClusteringResult {
    std::vector<FrequencyCluster> clusters;  // every frequency owning a neuron, ascending k
    std::vector<int> key_freqs;              // ascending
    std::vector<int> unclustered;            // constant or DC-dominated neurons
    std::vector<int> mismatched;             // clustered neurons with input primary != output primary
    std::vector<int> ties;                   // neurons whose primary was decided by a tie-break

    const FrequencyCluster* find(int k) const;
};

ClusteringResult cluster_by_frequency(const std::vector<NeuronSpectrum>& spectra,
                                      const ClusteringOptions& options = {});

struct PhaseRegression {
    int k = 0;
    int n = 0;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double max_residual = 0.0;       // of the fitted line
    double max_abs_deviation = 0.0;  // max |psi - 2 phi| after unwrapping
    double mean_gap = 0.0;           // sorted-phase gaps, including wraparound
    double gap_std = 0.0;
};

class DegenerateCluster : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fits psi against 2 phi modulo 2 pi over the surviving members. Each psi is
/// replaced by its representative nearest 2 phi before the fit.
PhaseRegression phase_regression(const FrequencyCluster& cluster);

struct SecondaryFrequencyStats {
    int k = 0;
    int expected_secondary = 0;  // fold(2k)
    int members = 0;
    int matching = 0;
    /// Unfolded secondary phase against 2 phi + pi, nearest-representative fit.
    double phase_r_squared = 0.0;
};

struct SecondaryReport {
    std::vector<SecondaryFrequencyStats> per_frequency;  // key frequencies only
    int clustered_neurons = 0;
    int matching_neurons = 0;
    double matching_fraction() const {
        return clustered_neurons ? static_cast<double>(matching_neurons) / clustered_neurons : 0.0;
    }
};

/// Frequency the secondary component of a primary-k neuron is expected at.
int expected_secondary(int k, int p);

SecondaryReport detect_secondary(const std::vector<NeuronSpectrum>& spectra,
                                 const ClusteringResult& clusters, int p);

/// Linear fit y = slope * x + intercept; returns R^2 (1 when y is exactly fit).
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace pizzaquad
