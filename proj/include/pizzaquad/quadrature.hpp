#pragma once

// Rectangle-rule view of a frequency cluster and its error bounds.
//
// A cluster's contribution to logit c is sum_i m_i h(phi_i), where h depends on
// (a, b, c) only through the angles s = w (a + b) / 2, t = w c and
// u = w (a - b) / 2 with w = 2 pi k / p. Turning the masses m_i into box widths
// makes that sum a quadrature rule for the integral of h over one period.

#include "pizzaquad/fourier.hpp"

#include <string>
#include <vector>

namespace pizzaquad {

enum class Variant { Relu, Abs, Identity, Secondary };
enum class Period { Full, Half };

std::string to_string(Variant v);
std::string to_string(Period p);
/// Throws std::invalid_argument for unknown names.
Variant parse_variant(const std::string& name);
Period parse_period(const std::string& name);

struct BoxScheme {
    int k = 0;
    int p = 0;
    double period = 0.0;                 // 2 pi, or pi after folding
    std::vector<int> neurons;            // sorted by phase
    std::vector<double> phases;          // ascending
    std::vector<double> psi;             // output phases, same order
    std::vector<double> widths;          // sum to period
    std::vector<double> boundaries;      // size n + 1, boundaries[i + 1] - boundaries[i] = widths[i]
    double z = 0.0;                      // total mass / 2 pi
    double negligible_mass = 0.0;        // mass of members left out

    std::size_t size() const { return phases.size(); }
};

class InvalidCluster : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Widths proportional to mass, tiled over [v_0, v_0 + 2 pi) in phase order.
/// v_0 is chosen so the box centres sit on the phases on average.
BoxScheme build_boxes(const FrequencyCluster& cluster, int p);

/// Folds phases into [0, pi) and halves the widths. Only meaningful for
/// pi-periodic integrands.
BoxScheme fold_half_period(const BoxScheme& full);

struct IntegrandSpec {
    Variant variant = Variant::Abs;
    double s = 0.0;
    double t = 0.0;
    int sigma = 1;
    double u = 0.0;  // secondary only
};

/// Angles for one (a, b, c) at frequency k. sigma is the sign of cos(u).
IntegrandSpec make_spec(Variant variant, int k, int p, int a, int b, int c);

/// h(phi), with the output phase psi in place of 2 phi.
double integrand(const IntegrandSpec& spec, double phi, double psi);
inline double integrand(const IntegrandSpec& spec, double phi) { return integrand(spec, phi, 2.0 * phi); }

/// Exact integral of h over one 2 pi period.
double closed_form(const IntegrandSpec& spec);
double closed_form(Variant variant, int k, int p, int a, int b, int c);

/// Composite midpoint rule over [0, 2 pi). n_points >= 16.
double numeric_integral(const IntegrandSpec& spec, int n_points);

/// sum_i w_i h(phi_i); with use_psi the output phases replace 2 phi_i.
/// On a half-period scheme the result is doubled so it estimates the same
/// full-period integral.
double quadrature_sum(const BoxScheme& boxes, const IntegrandSpec& spec, bool use_psi = false);

constexpr double kLipschitz = 2.0;
constexpr int kThetaGrid = 64;

/// Bound on |integral - quadrature sum| for one fixed shift of the boundaries.
double shifted_bound(const BoxScheme& boxes, double lipschitz, double theta);
/// Minimum of shifted_bound over kThetaGrid shifts spanning one mean box width.
double error_bound_full(const BoxScheme& boxes, double lipschitz = kLipschitz);
/// The same case sum on the folded scheme. The full-period error is at most
/// twice this value. Throws std::invalid_argument for variants that are not
/// pi-periodic.
double error_bound_half(const BoxScheme& full, Variant variant, double lipschitz = kLipschitz);

/// sum_i w_i |psi_i - 2 phi_i|, nearest representative mod 2 pi.
double angle_error(const BoxScheme& boxes);

/// Mean over x in [0, p) of |closed-form amplitude * cos(2 pi k x / p)|.
/// Zero for the identity and secondary variants.
double baseline(int k, int p, Variant variant);

struct BoundComponents {
    Variant variant = Variant::Abs;
    Period period = Period::Full;
    int k = 0;
    double eps_approx_int = 0.0;  // quadrature part, already recombined for Half
    double eps_phi = 0.0;
    double eps_0 = 0.0;
    /// (eps_approx_int + eps_phi) / eps_0; NaN when eps_0 == 0.
    double relative_total = 0.0;
    bool absolute_only = false;
};

BoundComponents bound_report(const BoxScheme& boxes, Variant variant, Period period);

struct BoxPlotRow {
    double lo = 0.0;
    double hi = 0.0;
    double phi = 0.0;
    double height = 0.0;
};

/// Rectangles under h for one (a, b, c).
std::vector<BoxPlotRow> box_plot_series(const BoxScheme& boxes, const IntegrandSpec& spec);

}  // namespace pizzaquad
