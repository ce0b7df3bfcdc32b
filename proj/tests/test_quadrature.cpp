#include "doctest.h"
#include "test_support.hpp"

#include "pizzaquad/quadrature.hpp"
#include "pizzaquad/validation.hpp"

#include <cmath>
#include <ctime>
#include <numbers>

using namespace pizzaquad;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

FrequencyCluster uniform_cluster(int k, int n, double offset = 0.0) {
    FrequencyCluster c;
    c.k = k;
    for (int i = 0; i < n; ++i) {
        const double phi = wrap_angle(-kPi + (i + 0.5) * kTwoPi / n + offset);
        c.members.push_back({i, phi, wrap_angle(2 * phi), 1.0, 1.0, 1.0, false});
    }
    return c;
}

// Random phases, masses and small output-phase noise.
FrequencyCluster random_cluster(int k, int n, std::mt19937& rng, double psi_noise = 0.05) {
    std::uniform_real_distribution<double> angle(-kPi, kPi);
    std::uniform_real_distribution<double> mass(0.2, 2.0);
    std::normal_distribution<double> noise(0.0, psi_noise);
    FrequencyCluster c;
    c.k = k;
    for (int i = 0; i < n; ++i) {
        const double phi = angle(rng);
        c.members.push_back({i, phi, wrap_angle(2 * phi + noise(rng)), 1.0, 1.0, mass(rng), false});
    }
    std::sort(c.members.begin(), c.members.end(), [](const auto& x, const auto& y) { return x.phi < y.phi; });
    return c;
}

double total_width(const BoxScheme& b) {
    double s = 0.0;
    for (double w : b.widths) s += w;
    return s;
}

}  // namespace

TEST_CASE("closed forms match adaptive quadrature from scipy") {
    for (const auto& c : testing::oracle_values()["integrals"]) {
        const Variant v = parse_variant(c["variant"].get<std::string>());
        const double got = closed_form(v, c["k"], 59, c["a"], c["b"], c["c"]);
        CHECK(got == doctest::Approx(c["value"].get<double>()).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("closed forms agree with the midpoint rule on random draws") {
    std::mt19937 rng(17);
    std::uniform_int_distribution<int> freq(1, 29), tok(0, 58);
    for (Variant v : {Variant::Relu, Variant::Abs, Variant::Identity, Variant::Secondary}) {
        double worst = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            const auto spec = make_spec(v, freq(rng), 59, tok(rng), tok(rng), tok(rng));
            worst = std::max(worst, std::abs(numeric_integral(spec, 1 << 16) - closed_form(spec)));
        }
        CHECK_MESSAGE(worst < 1e-6, to_string(v));
    }
}

TEST_CASE("named closed-form values") {
    CHECK(closed_form(Variant::Relu, 12, 59, 10, 20, 30) == doctest::Approx(2.0 / 3.0));
    CHECK(closed_form(Variant::Abs, 12, 59, 10, 20, 30) == doctest::Approx(4.0 / 3.0));
    CHECK(closed_form(Variant::Secondary, 5, 59, 4, 4, 8) == doctest::Approx(-kPi / 2));
    CHECK(closed_form(Variant::Identity, 5, 59, 1, 2, 3) == 0.0);
}

TEST_CASE("numeric integral") {
    IntegrandSpec relu;
    relu.variant = Variant::Relu;
    CHECK(numeric_integral(relu, 1 << 16) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    IntegrandSpec identity;
    identity.variant = Variant::Identity;
    identity.s = 0.3;
    identity.t = 1.1;
    CHECK(std::abs(numeric_integral(identity, 1 << 12)) < 1e-9);
    IntegrandSpec zero;
    zero.variant = Variant::Secondary;
    zero.u = kPi / 4;  // cos(2u) = 0
    CHECK(std::abs(numeric_integral(zero, 64)) < 1e-15);
    CHECK_THROWS_AS(numeric_integral(relu, 8), std::invalid_argument);

    const auto spec = make_spec(Variant::Abs, 3, 59, 1, 2, 3);
    const double exact = closed_form(spec);
    const double e1 = std::abs(numeric_integral(spec, 100) - exact);
    const double e2 = std::abs(numeric_integral(spec, 400) - exact);
    CHECK(e2 < e1);
}

TEST_CASE("Lipschitz constant 2 holds for every variant") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> angle(-kPi, kPi);
    const int n = 10000;
    const double h = kTwoPi / n;
    for (Variant v : {Variant::Relu, Variant::Abs, Variant::Identity, Variant::Secondary}) {
        double steepest = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            IntegrandSpec spec{v, angle(rng), angle(rng), trial % 2 ? 1 : -1, angle(rng)};
            for (int j = 0; j < n; ++j)
                steepest = std::max(steepest, std::abs(integrand(spec, (j + 1) * h) - integrand(spec, j * h)) / h);
        }
        CHECK_MESSAGE(steepest <= kLipschitz + 1e-6, to_string(v));
    }
}

TEST_CASE("box construction") {
    SUBCASE("uniform cluster gives centred equal boxes") {
        const auto b = build_boxes(uniform_cluster(12, 16), 59);
        CHECK(total_width(b) == doctest::Approx(kTwoPi).epsilon(1e-12));
        CHECK(b.boundaries.back() - b.boundaries.front() == doctest::Approx(kTwoPi).epsilon(1e-15));
        for (std::size_t i = 0; i < b.size(); ++i) {
            CHECK(b.widths[i] == doctest::Approx(kTwoPi / 16));
            CHECK(0.5 * (b.boundaries[i] + b.boundaries[i + 1]) == doctest::Approx(b.phases[i]));
        }
        CHECK(b.z == doctest::Approx(16.0 / kTwoPi));
    }
    SUBCASE("guards") {
        FrequencyCluster one = uniform_cluster(3, 4);
        for (std::size_t i = 1; i < 4; ++i) one.members[i].negligible = true;
        CHECK_THROWS_AS(build_boxes(one, 59), InvalidCluster);
        FrequencyCluster massless = uniform_cluster(3, 4);
        for (auto& m : massless.members) m.mass = 0.0;
        CHECK_THROWS_AS(build_boxes(massless, 59), InvalidCluster);
    }
    SUBCASE("widths sum to the period") {
        std::mt19937 rng(3);
        const auto b = build_boxes(random_cluster(7, 25, rng), 59);
        CHECK(total_width(b) == doctest::Approx(kTwoPi).epsilon(1e-12));
        CHECK(total_width(fold_half_period(b)) == doctest::Approx(kPi).epsilon(1e-12));
    }
}

TEST_CASE("uniform scheme bound equals 2 pi^2 / n and converges as 1/n") {
    const auto frozen = testing::oracle_values()["uniform_bounds"];
    double previous = 0.0;
    for (int n : {64, 128, 256, 512}) {
        const double bound = error_bound_full(build_boxes(uniform_cluster(5, n), 59));
        CHECK(bound == doctest::Approx(frozen[std::to_string(n)].get<double>()).epsilon(1e-9));
        CHECK(std::abs(bound - 2 * kPi * kPi / n) < 1e-9);
        if (previous > 0.0) CHECK(previous / bound == doctest::Approx(2.0).epsilon(0.1));
        previous = bound;
    }
}

TEST_CASE("uniform scheme quadrature is close to the closed form") {
    const auto b = build_boxes(uniform_cluster(12, 512), 59);
    const auto spec = make_spec(Variant::Relu, 12, 59, 3, 8, 11);
    const double exact = closed_form(spec);
    CHECK(std::abs(quadrature_sum(b, spec) - exact) <= 0.01 * std::abs(exact));
}

TEST_CASE("half-period folding of a uniform scheme") {
    const auto full = build_boxes(uniform_cluster(5, 64), 59);
    const auto half = fold_half_period(full);
    CHECK(half.size() == 64);
    for (double w : half.widths) CHECK(w == doctest::Approx(kPi / 64));
    for (double phi : half.phases) {
        CHECK(phi >= 0.0);
        CHECK(phi < kPi);
    }
    CHECK(error_bound_half(full, Variant::Abs) == doctest::Approx(0.5 * error_bound_full(full)).epsilon(1e-9));
    CHECK_THROWS_AS(error_bound_half(full, Variant::Relu), std::invalid_argument);
    CHECK_THROWS_AS(error_bound_half(full, Variant::Identity), std::invalid_argument);

    FrequencyCluster upper;
    upper.k = 3;
    for (int i = 0; i < 8; ++i) upper.members.push_back({i, 0.1 + 0.35 * i, 0.0, 1, 1, 1.0, false});
    const auto folded = fold_half_period(build_boxes(upper, 59));
    for (int i = 0; i < 8; ++i) CHECK(folded.phases[static_cast<std::size_t>(i)] == doctest::Approx(0.1 + 0.35 * i));
}

TEST_CASE("angle error") {
    auto c = uniform_cluster(5, 10);
    CHECK(angle_error(build_boxes(c, 59)) == doctest::Approx(0.0).scale(1.0));
    c.members[3].psi = wrap_angle(c.members[3].psi + 0.01);
    const auto b = build_boxes(c, 59);
    CHECK(angle_error(b) == doctest::Approx(kTwoPi / 10 * 0.01).epsilon(1e-9));
}

TEST_CASE("baselines") {
    const auto frozen = testing::oracle_values()["baselines"];
    for (int k : {1, 12, 20, 29}) {
        CHECK(baseline(k, 59, Variant::Abs) == doctest::Approx(frozen[std::to_string(k)]["abs"].get<double>()).epsilon(1e-12));
        CHECK(baseline(k, 59, Variant::Relu) == doctest::Approx(frozen[std::to_string(k)]["relu"].get<double>()).epsilon(1e-12));
    }
    CHECK(std::abs(baseline(12, 59, Variant::Abs) - 0.85) <= 0.01);
    CHECK(std::abs(baseline(12, 59, Variant::Relu) - 0.42) <= 0.01);
    const double continuum = 4.0 / 3.0 * 2.0 / kPi;
    CHECK(std::abs(baseline(12, 59, Variant::Abs) - continuum) < 0.02 * continuum);
    CHECK(baseline(12, 59, Variant::Identity) == 0.0);
    CHECK_THROWS_AS(baseline(30, 59, Variant::Abs), std::invalid_argument);
}

TEST_CASE("bound report") {
    const auto b = build_boxes(uniform_cluster(12, 128), 59);
    const auto r = bound_report(b, Variant::Abs, Period::Full);
    CHECK(r.eps_phi == doctest::Approx(0.0).scale(1.0));
    CHECK(r.relative_total == doctest::Approx(r.eps_approx_int / r.eps_0));
    CHECK(r.relative_total < 1.0);
    const auto id = bound_report(b, Variant::Identity, Period::Full);
    CHECK(id.absolute_only);
    CHECK(std::isnan(id.relative_total));
    CHECK_THROWS_AS(bound_report(b, Variant::Identity, Period::Half), std::invalid_argument);
}

TEST_CASE("bounds are sound on random schemes") {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> size(8, 120), freq(1, 29);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto boxes = build_boxes(random_cluster(freq(rng), size(rng), rng), 59);
        for (Variant v : {Variant::Abs, Variant::Relu}) {
            const auto actual = actual_quadrature_error(boxes, v, true).max_abs;
            for (Period per : {Period::Full, Period::Half}) {
                const auto r = bound_report(boxes, v, per);
                CHECK(actual <= r.eps_approx_int + r.eps_phi + 1e-12);
            }
            const auto ideal = actual_quadrature_error(boxes, v, false).max_abs;
            CHECK(ideal <= error_bound_full(boxes) + 1e-12);
        }
        // Every fixed shift is a valid bound, not only the minimum.
        const double ideal_abs = actual_quadrature_error(boxes, Variant::Abs, false).max_abs;
        for (int s = 0; s < 5; ++s) {
            const double theta = (unit(rng) - 0.5) * kTwoPi / static_cast<double>(boxes.size());
            CHECK(ideal_abs <= shifted_bound(boxes, kLipschitz, theta) + 1e-12);
        }
        CHECK(error_bound_half(boxes, Variant::Abs) * 2 <= shifted_bound(boxes, kLipschitz, 0.0) * 2 + 1e-12);
    }
}

TEST_CASE("secondary bound is sound") {
    std::mt19937 rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        const auto boxes = build_boxes(random_cluster(9, 40, rng), 59);
        const double actual = actual_quadrature_error(boxes, Variant::Secondary, true).max_abs;
        CHECK(actual <= error_bound_full(boxes) + angle_error(boxes) + 1e-12);
        CHECK(actual <= 2 * error_bound_half(boxes, Variant::Secondary) + angle_error(boxes) + 1e-12);
    }
}

TEST_CASE("actual error shrinks with the number of boxes") {
    double previous = 1e9;
    for (int n : {64, 128, 256, 512}) {
        const auto err = actual_quadrature_error(build_boxes(uniform_cluster(12, n, 0.013), 59), Variant::Abs, false);
        CHECK(err.max_rel < previous);
        CHECK(err.per_sum.size() == 59);
        previous = err.max_rel;
    }
    CHECK(previous < 0.01);
}

TEST_CASE("bound computation is linear in the neuron count") {
    std::mt19937 rng(1);
    auto time_for = [&](int n) {
        const auto cluster = random_cluster(11, n, rng);
        double best = 1e9;
        for (int rep = 0; rep < 5; ++rep) {
            // Process CPU time, so other load on the machine does not count.
            const std::clock_t t0 = std::clock();
            const auto b = build_boxes(cluster, 59);
            double sink = 0.0;
            for (Variant v : {Variant::Abs, Variant::Relu})
                for (Period per : {Period::Full, Period::Half}) sink += bound_report(b, v, per).relative_total;
            const std::clock_t t1 = std::clock();
            CHECK(std::isfinite(sink));
            best = std::min(best, static_cast<double>(t1 - t0) / CLOCKS_PER_SEC);
        }
        return best;
    };
    const double small = time_for(512);
    const double large = time_for(8192);
    CHECK(large / small <= 1.5 * 16);
}

TEST_CASE("plot rows cover the period") {
    const auto b = build_boxes(uniform_cluster(4, 20, 0.2), 59);
    const auto rows = box_plot_series(b, make_spec(Variant::Abs, 4, 59, 0, 0, 0));
    REQUIRE(rows.size() == 20);
    double width = 0.0;
    for (const auto& r : rows) width += r.hi - r.lo;
    CHECK(width == doctest::Approx(kTwoPi).epsilon(1e-12));
}
