#include "pizzaquad/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace pizzaquad {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double nearest_representative(double x, double target, double period) {
    return x + period * std::round((target - x) / period);
}

// Places the boundaries so that box centres match the phases on average.
void anchor_boundaries(BoxScheme& b) {
    const std::size_t n = b.size();
    std::vector<double> centre(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        centre[i] = acc + 0.5 * b.widths[i];
        acc += b.widths[i];
    }
    double offset = 0.0;
    for (std::size_t i = 0; i < n; ++i) offset += b.phases[i] - centre[i];
    offset /= static_cast<double>(n);
    b.boundaries.assign(n + 1, offset);
    for (std::size_t i = 0; i < n; ++i) b.boundaries[i + 1] = b.boundaries[i] + b.widths[i];
    // Pin the last boundary so the tiling covers exactly one period.
    b.boundaries[n] = b.boundaries[0] + b.period;
}

void sort_by_phase(BoxScheme& b) {
    std::vector<std::size_t> order(b.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return b.phases[x] != b.phases[y] ? b.phases[x] < b.phases[y] : b.neurons[x] < b.neurons[y];
    });
    auto permute = [&](auto& v) {
        auto copy = v;
        for (std::size_t i = 0; i < order.size(); ++i) v[i] = copy[order[i]];
    };
    permute(b.neurons);
    permute(b.phases);
    permute(b.psi);
    permute(b.widths);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Relu: return "relu";
        case Variant::Abs: return "abs";
        case Variant::Identity: return "identity";
        case Variant::Secondary: return "secondary";
    }
    return "?";
}

std::string to_string(Period p) { return p == Period::Full ? "full" : "half"; }

Variant parse_variant(const std::string& name) {
    if (name == "relu") return Variant::Relu;
    if (name == "abs") return Variant::Abs;
    if (name == "identity") return Variant::Identity;
    if (name == "secondary") return Variant::Secondary;
    throw std::invalid_argument("unknown variant '" + name + "'");
}

Period parse_period(const std::string& name) {
    if (name == "full") return Period::Full;
    if (name == "half") return Period::Half;
    throw std::invalid_argument("unknown period '" + name + "'");
}

BoxScheme build_boxes(const FrequencyCluster& cluster, int p) {
    const auto members = cluster.surviving();
    if (members.size() < 2) throw InvalidCluster("cluster needs at least 2 surviving members");
    double total = 0.0;
    for (const auto& m : members) total += m.mass;
    if (!(total > 0.0)) throw InvalidCluster("cluster has zero total mass");

    BoxScheme b;
    b.k = cluster.k;
    b.p = p;
    b.period = kTwoPi;
    b.negligible_mass = cluster.negligible_mass();
    b.z = total / kTwoPi;
    for (const auto& m : members) {
        b.neurons.push_back(m.neuron);
        b.phases.push_back(m.phi);
        b.psi.push_back(m.psi);
        b.widths.push_back(kTwoPi * m.mass / total);
    }
    sort_by_phase(b);
    anchor_boundaries(b);
    return b;
}

BoxScheme fold_half_period(const BoxScheme& full) {
    BoxScheme h = full;
    h.period = kPi;
    for (auto& phi : h.phases) {
        if (phi < 0.0) phi += kPi;
        if (phi >= kPi) phi -= kPi;
    }
    for (auto& w : h.widths) w *= 0.5;
    sort_by_phase(h);
    anchor_boundaries(h);
    return h;
}

IntegrandSpec make_spec(Variant variant, int k, int p, int a, int b, int c) {
    const double w = kTwoPi * k / p;
    IntegrandSpec s;
    s.variant = variant;
    s.s = 0.5 * w * (a + b);
    s.t = w * c;
    s.u = 0.5 * w * (a - b);
    s.sigma = std::cos(s.u) >= 0.0 ? 1 : -1;
    return s;
}

double integrand(const IntegrandSpec& spec, double phi, double psi) {
    const double out = std::cos(spec.t + psi);
    switch (spec.variant) {
        case Variant::Relu: return relu(spec.sigma * std::cos(spec.s + phi)) * out;
        case Variant::Abs: return std::abs(std::cos(spec.s + phi)) * out;
        case Variant::Identity: return spec.sigma * std::cos(spec.s + phi) * out;
        case Variant::Secondary: return relu(-std::cos(2.0 * spec.u) * std::cos(2.0 * spec.s + 2.0 * phi)) * out;
    }
    throw std::invalid_argument("unknown variant");
}

double closed_form(const IntegrandSpec& spec) {
    const double clock = std::cos(2.0 * spec.s - spec.t);
    switch (spec.variant) {
        case Variant::Relu: return 2.0 / 3.0 * clock;
        case Variant::Abs: return 4.0 / 3.0 * clock;
        case Variant::Identity: return 0.0;
        case Variant::Secondary: return -0.5 * kPi * std::cos(2.0 * spec.u) * clock;
    }
    throw std::invalid_argument("unknown variant");
}

double closed_form(Variant variant, int k, int p, int a, int b, int c) {
    return closed_form(make_spec(variant, k, p, a, b, c));
}

double numeric_integral(const IntegrandSpec& spec, int n_points) {
    if (n_points < 16) throw std::invalid_argument("numeric_integral needs at least 16 points");
    const double h = kTwoPi / n_points;
    double sum = 0.0;
    for (int j = 0; j < n_points; ++j) sum += integrand(spec, (j + 0.5) * h);
    return sum * h;
}

double quadrature_sum(const BoxScheme& boxes, const IntegrandSpec& spec, bool use_psi) {
    double sum = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const double phi = boxes.phases[i];
        sum += boxes.widths[i] * (use_psi ? integrand(spec, phi, boxes.psi[i]) : integrand(spec, phi));
    }
    return sum * (kTwoPi / boxes.period);
}

double shifted_bound(const BoxScheme& boxes, double lipschitz, double theta) {
    double sum = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const double lo = boxes.boundaries[i] + theta;
        const double hi = boxes.boundaries[i + 1] + theta;
        const double phi = nearest_representative(boxes.phases[i], 0.5 * (lo + hi), boxes.period);
        const double dl = (lo - phi) * (lo - phi);
        const double dh = (hi - phi) * (hi - phi);
        // Integral of |x - phi| over [lo, hi].
        sum += (lo <= phi && phi <= hi) ? 0.5 * (dl + dh) : 0.5 * std::abs(dh - dl);
    }
    return lipschitz * sum;
}

double error_bound_full(const BoxScheme& boxes, double lipschitz) {
    const double span = boxes.period / static_cast<double>(boxes.size());
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < kThetaGrid; ++j) {
        const double theta = (static_cast<double>(j - kThetaGrid / 2) / kThetaGrid) * span;
        best = std::min(best, shifted_bound(boxes, lipschitz, theta));
    }
    return best;
}

double error_bound_half(const BoxScheme& full, Variant variant, double lipschitz) {
    if (variant != Variant::Abs && variant != Variant::Secondary)
        throw std::invalid_argument("half-period bound needs a pi-periodic integrand, got " + to_string(variant));
    return error_bound_full(fold_half_period(full), lipschitz);
}

double angle_error(const BoxScheme& boxes) {
    double sum = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const double target = 2.0 * boxes.phases[i];
        sum += boxes.widths[i] * std::abs(wrap_angle(boxes.psi[i] - target));
    }
    return sum * (kTwoPi / boxes.period);
}

double baseline(int k, int p, Variant variant) {
    if (k < 1 || 2 * k > p - 1) throw std::invalid_argument("baseline: frequency out of range");
    double amplitude = 0.0;
    if (variant == Variant::Abs) amplitude = 4.0 / 3.0;
    else if (variant == Variant::Relu) amplitude = 2.0 / 3.0;
    else return 0.0;
    double sum = 0.0;
    for (int x = 0; x < p; ++x) sum += std::abs(std::cos(kTwoPi * k * x / p));
    return amplitude * sum / p;
}

BoundComponents bound_report(const BoxScheme& boxes, Variant variant, Period period) {
    BoundComponents r;
    r.variant = variant;
    r.period = period;
    r.k = boxes.k;
    if (period == Period::Full) {
        r.eps_approx_int = error_bound_full(boxes);
    } else if (variant == Variant::Relu) {
        // ReLU(x) = x / 2 + |x| / 2: the identity half needs the full period.
        r.eps_approx_int = 0.5 * error_bound_full(boxes) + error_bound_half(boxes, Variant::Abs);
    } else {
        r.eps_approx_int = 2.0 * error_bound_half(boxes, variant);
    }
    r.eps_phi = angle_error(boxes);
    r.eps_0 = baseline(boxes.k, boxes.p, variant);
    if (r.eps_0 > 0.0) {
        r.relative_total = (r.eps_approx_int + r.eps_phi) / r.eps_0;
    } else {
        r.relative_total = std::numeric_limits<double>::quiet_NaN();
        r.absolute_only = true;
    }
    return r;
}

std::vector<BoxPlotRow> box_plot_series(const BoxScheme& boxes, const IntegrandSpec& spec) {
    std::vector<BoxPlotRow> rows;
    rows.reserve(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i)
        rows.push_back({boxes.boundaries[i], boxes.boundaries[i + 1], boxes.phases[i], integrand(spec, boxes.phases[i])});
    return rows;
}

}  // namespace pizzaquad
