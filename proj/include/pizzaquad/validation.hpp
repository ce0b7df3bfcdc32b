#pragma once

// Checks that tie the quadrature picture back to the model's actual logits.

#include "pizzaquad/quadrature.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pizzaquad {

struct QuadratureError {
    int k = 0;
    Variant variant = Variant::Abs;
    bool uses_psi = true;
    double max_abs = 0.0;
    double max_rel = 0.0;   // max_abs / baseline; NaN without a baseline
    double mean_rel = 0.0;
    /// Worst relative error over c (and sigma) for each a + b in [0, p).
    std::vector<double> per_sum;
};

/// |quadrature_sum - closed_form| over every a + b, c and sign. With uses_psi
/// the output phases stand in for 2 phi, which is what the bound covers.
QuadratureError actual_quadrature_error(const BoxScheme& boxes, Variant variant, bool uses_psi = true);

/// Logits split by the ReLU identity ReLU(x) = x / 2 + |x| / 2. Each matrix is
/// p x p^2 with column a * p + b, and abs + identity + skip equals the logits.
struct LogitComponents {
    Matrix abs;       // W_L |pre| / 2
    Matrix identity;  // W_L pre / 2
    Matrix skip;      // W_U (x1 + b_out)

    Matrix mlp() const { return abs + identity; }
    Matrix total() const { return abs + identity + skip; }
};

LogitComponents logit_components(const ModelWeights& w, int p);

enum class RegressionTarget { Clock, Pizza };
enum class LogitScope { Full, Mlp, AbsOnly };

std::string to_string(RegressionTarget t);
std::string to_string(LogitScope s);

struct RegressionResult {
    RegressionTarget target = RegressionTarget::Clock;
    LogitScope scope = LogitScope::Full;
    double r_squared = 0.0;
    std::vector<int> freqs;
    std::vector<double> coefficients;  // one per frequency
};

/// Logits centred over c for each (a, b); p x p^2.
Matrix centre_over_outputs(const Matrix& logits);

/// Least squares of centred logits on clock features cos(w (a + b - c)) or
/// pizza features |cos(w (a - b) / 2)| cos(w (a + b - c)), no intercept.
RegressionResult regress(const Matrix& logits, int p, const std::vector<int>& freqs, RegressionTarget target);

/// Both targets over the full, MLP-only and abs-only logits.
std::vector<RegressionResult> regress_logits(const LogitComponents& parts, int p, const std::vector<int>& freqs);

struct IdentityCoefficients {
    int k = 0;
    double c = 0.0;  // abs-only logits ~ C_k |cos(w (a - b) / 2)| cos(w (a + b - c))
    double d = 0.0;  // identity logits ~ D_k cos(w (b - a)) cos(w (a + b - c))
    double e = 0.0;  // sine part of the same 2D pattern
};

struct IdentityComponentFit {
    Matrix logit_id1;  // [c, a] = (W_L W_in OV W_E a)_c / 2
    Matrix logit_id2;  // [c, a] = (W_U OV W_E a)_c / 4, the direct-path analogue
    std::vector<IdentityCoefficients> coefficients;
    /// R^2 of sum_k (C_k |cos| + D_k cos(w (b - a))) cos(w (a + b - c)) against
    /// the centred model logits.
    double reconstruction_r_squared = 0.0;
};

IdentityComponentFit identity_component(const ModelWeights& w, int p, const LogitComponents& parts,
                                        const std::vector<int>& freqs);

/// The secondary-frequency logit pattern -(pi / 2) cos(w (a - b)) cos(w (a + b - c)).
double secondary_template(int k, int p, int a, int b, int c);

struct SecondaryFit {
    std::vector<int> freqs;
    std::vector<double> pizza_coefficients;
    std::vector<double> template_coefficients;
    double r_squared_pizza_only = 0.0;
    double r_squared_with_template = 0.0;
    /// Fitted template contribution at c = a + b and a - b nearest p / (2k).
    std::vector<double> contribution_at_pizza_gap;
    bool compensates() const;
};

/// Joint fit of abs-only logits on pizza features plus the secondary template.
SecondaryFit secondary_contribution(const Matrix& abs_logits, int p, const std::vector<int>& freqs);

/// Per-seed facts that the multi-seed summary aggregates.
struct SeedFacts {
    std::uint64_t seed = 0;
    double accuracy = 0.0;  // over all p^2 pairs
    std::vector<int> key_freqs;
    int mismatched = 0;
    std::vector<double> phase_r_squared;  // per key frequency
    std::vector<double> mean_gap;
    std::vector<double> gap_std;
    std::vector<double> actual_rel;       // abs variant, per key frequency
    std::vector<double> bound_rel;        // abs variant, full period
    std::vector<double> baseline;
};

struct SeedFlags {
    std::uint64_t seed = 0;
    int key_count = 0;
    bool perfect_accuracy = false;
    bool frequencies_match = false;
    bool phase_regression = false;  // R^2 > 0.9 for every key frequency
    bool uniform_gaps = false;      // mean gap > gap std for every key frequency
    bool small_errors = false;      // every actual relative error < 0.1
    bool good() const { return frequencies_match && phase_regression && uniform_gaps; }
};

SeedFlags seed_flags(const SeedFacts& facts);

struct SeedSummary {
    std::vector<SeedFlags> seeds;
    double perfect_accuracy_fraction = 0.0;
    double frequency_match_fraction = 0.0;
    double phase_regression_fraction = 0.0;
    double uniform_gap_fraction = 0.0;
    double small_error_fraction = 0.0;
    double good_fraction = 0.0;
    std::vector<int> key_count_histogram;  // index = number of key frequencies
    /// Over (model, frequency) pairs of good models; NaN when there are none.
    double median_relative_bound = 0.0;
    double fraction_below_baseline = 0.0;
};

SeedSummary multi_seed_summary(const std::vector<SeedFacts>& facts);

}  // namespace pizzaquad
