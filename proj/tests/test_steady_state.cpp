#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "kerrcomb/steady_state.hpp"

using namespace kerrcomb;

namespace {

double power_for_flux(const SystemParams& p, double flux) { return flux * kHbar * p.pump_omega(); }

// independent residual check: brute-force quadruple sum, not the solver path
double residual_by_quadruples(const SystemParams& p, const ClassicalState& s, double P) {
    const Complex I(0.0, 1.0);
    double worst = 0.0;
    const auto quads = energy_conserving_quadruples(p.M);
    for (int j = -p.M; j <= p.M; ++j) {
        Complex nl(0.0, 0.0);
        for (const auto& t : quads) {
            if (t.r == j) nl += std::conj(s.a(t.s)) * s.a(t.p) * s.a(t.q);
            if (t.s == j) nl += std::conj(s.a(t.r)) * s.a(t.p) * s.a(t.q);
        }
        Complex F = -(0.5 * p.kappa_total_at(j) + I * p.detuning_at(j)) * s.a(j) +
                    I * (p.g / 2.0) * nl;
        if (j == 0) F += std::sqrt(p.kappa_ext_at(0)) * p.drive_amplitude_at(P);
        worst = std::max(worst, std::abs(F));
    }
    return worst;
}

// sign of the cubic discriminant of g^2 x^3 - 2 g d0 x^2 + ((k/2)^2 + d0^2) x - F
int discriminant_root_count(const SystemParams& p, double P) {
    const double a = p.g * p.g;
    const double b = -2.0 * p.g * p.detuning_at(0);
    const double c = 0.25 * p.kappa_total_at(0) * p.kappa_total_at(0) +
                     p.detuning_at(0) * p.detuning_at(0);
    const double d = -p.kappa_ext_at(0) * p.pump_photon_flux_at(P);
    const double disc = 18.0 * a * b * c * d - 4.0 * b * b * b * d + b * b * c * c -
                        4.0 * a * c * c * c - 27.0 * a * a * d * d;
    return disc > 0.0 ? 3 : 1;
}

}  // namespace

TEST_CASE("pump_only_roots: no drive gives the zero state") {
    SystemParams p = make_params(1, 2.0, 1.6, 0.5, 0.0, 0.7, 0.0);
    auto roots = pump_only_roots(p, 0.0);
    REQUIRE(roots.size() == 1);
    CHECK(roots[0].amps.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pump_only_roots: linear cavity has the closed-form single root") {
    SystemParams p = make_params(1, 2.0, 1.6, 0.5, 0.0, 0.0, 0.0);
    const double P = power_for_flux(p, 3.0);
    auto roots = pump_only_roots(p, P);
    REQUIRE(roots.size() == 1);
    const double expect = 1.6 * 3.0 / (1.0 + 0.25);
    CHECK_THAT(std::norm(roots[0].a(0)), Catch::Matchers::WithinRel(expect, 1e-12));
    // phase from the linear response
    const Complex denom(1.0, 0.5);
    const Complex a_exp = std::sqrt(1.6 * 3.0) / denom;
    CHECK(std::abs(roots[0].a(0) - a_exp) <= 1e-12 * std::abs(a_exp));
}

TEST_CASE("pump_only_roots: bistable detuning gives three roots where the discriminant says so") {
    SystemParams p = make_params(1, 2.0, 1.6, std::sqrt(3.0) * 2.0, 0.0, 0.5, 0.0);
    int three_count = 0;
    for (double flux = 0.5; flux < 40.0; flux *= 1.15) {
        const double P = power_for_flux(p, flux);
        auto roots = pump_only_roots(p, P);
        const int expected = discriminant_root_count(p, P);
        INFO("flux = " << flux << ", roots = " << roots.size());
        CHECK(static_cast<int>(roots.size()) == expected);
        if (roots.size() == 3) ++three_count;
        // every root satisfies the cubic: re-evaluate via the physical RHS
        for (const auto& s : roots)
            CHECK(residual_by_quadruples(p, s, P) <= 1e-9 * std::max(1.0, s.amps.cwiseAbs().maxCoeff()));
    }
    CHECK(three_count >= 3);
}

TEST_CASE("threshold: no gain means no threshold") {
    SystemParams p = make_params(1, 2.0, 1.6, 0.0, 4.0, 0.0, 0.0);
    CHECK_THROWS_AS(threshold(p), DomainError);
}

TEST_CASE("threshold matches the analytic single-sideband oracle") {
    // M=1, delta0=0, D2=2*kappa: the pair gain peaks at zero effective
    // mismatch and the closed form g|A0|^2 = kappa/2 is exact.
    SystemParams p = make_params(1, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    ThresholdOptions opt;
    opt.P_min = power_for_flux(p, 1e-3);
    opt.P_max = power_for_flux(p, 1e3);
    const ThresholdResult th = threshold(p, opt);
    CHECK(th.k_star == 1);

    // independent scalar root-finding on the pair-block growth condition
    const double kappa = 2.0, g = 0.5, d1 = 2.0;
    auto h = [&](double x) {
        const double mism = d1 - 2.0 * g * x;
        return g * g * x * x - mism * mism - 0.25 * kappa * kappa;
    };
    double lo = 0.0, hi = 10.0 / g;
    REQUIRE(h(lo) < 0.0);
    while (h(hi) < 0.0) hi *= 0.5;  // make sure hi is inside the gain window
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (h(mid) < 0.0 ? lo : hi) = mid;
    }
    const double x_th = 0.5 * (lo + hi);
    CHECK_THAT(x_th, Catch::Matchers::WithinRel(kappa / (2.0 * g), 1e-6));
    const double flux_th = x_th * (0.25 * kappa * kappa + g * g * x_th * x_th) / 1.6;
    const double P_expected = power_for_flux(p, flux_th);
    CHECK_THAT(th.P_th, Catch::Matchers::WithinRel(P_expected, 1e-5));
    CHECK_THAT(th.pump_intensity, Catch::Matchers::WithinRel(x_th, 1e-5));
}

TEST_CASE("threshold rises with the loss rate") {
    SystemParams p1 = make_params(1, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    SystemParams p2 = make_params(1, 4.0, 1.6, 0.0, 8.0, 0.5, 0.0);
    ThresholdOptions opt;
    opt.P_min = power_for_flux(p1, 1e-3);
    opt.P_max = power_for_flux(p1, 1e4);
    CHECK(threshold(p2, opt).P_th > threshold(p1, opt).P_th);
}

TEST_CASE("threshold is invariant under the gauge rescaling") {
    SystemParams p = make_params(2, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    ThresholdOptions opt;
    opt.P_min = power_for_flux(p, 1e-3);
    opt.P_max = power_for_flux(p, 1e4);
    const double P1 = threshold(p, opt).P_th;

    const double lambda = 2.3;
    SystemParams p2 = p;
    p2.g = p.g / (lambda * lambda);
    ThresholdOptions opt2 = opt;
    opt2.P_min *= lambda * lambda;
    opt2.P_max *= lambda * lambda;
    const double P2 = threshold(p2, opt2).P_th;
    CHECK_THAT(P2, Catch::Matchers::WithinRel(lambda * lambda * P1, 1e-5));
}

TEST_CASE("solve_comb keeps the below-threshold pump-only fixed point") {
    SystemParams p = make_params(2, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    const double P = power_for_flux(p, 0.5);
    const ClassicalState root = pump_only_roots(p, P)[0];
    const ClassicalState sol = solve_comb(p, P, root);
    CHECK((sol.amps - root.amps).cwiseAbs().maxCoeff() <= 1e-9);
}

namespace {

SystemParams comb_test_params() { return make_params(2, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0); }

ClassicalState comb_at(const SystemParams& p, double P, int k_star) {
    return capture_comb(p, P, k_star);
}

}  // namespace

TEST_CASE("solve_comb finds the comb at P = 1.13 P_th") {
    SystemParams p = comb_test_params();
    ThresholdOptions topt;
    topt.P_min = power_for_flux(p, 1e-3);
    topt.P_max = power_for_flux(p, 1e3);
    const ThresholdResult th = threshold(p, topt);
    const double P = 1.13 * th.P_th;
    const ClassicalState comb = comb_at(p, P, th.k_star);

    CHECK(std::abs(comb.a(1)) > 0.0);
    CHECK_THAT(std::abs(comb.a(1)), Catch::Matchers::WithinRel(std::abs(comb.a(-1)), 1e-8));
    const double scale = std::max(1.0, comb.amps.cwiseAbs().maxCoeff());
    CHECK(residual_by_quadruples(p, comb, P) <= 1e-10 * scale);
    CHECK(comb.pump_power_at_solution == P);
    // sidebands carry real power above threshold
    CHECK(std::norm(comb.a(1)) > 1e-4 * std::norm(comb.a(0)));
}

TEST_CASE("stability: empty cavity decays at kappa/2") {
    SystemParams p = make_params(2, 2.0, 1.6, 0.7, 0.3, 0.0, 0.0);
    p.kappa_total[0] = 3.0;  // make the rates distinguishable
    ClassicalState s(p.M);
    const StabilitySpectrum st = stability_eigenvalues(p, s);
    REQUIRE(st.eigenvalues.size() == 10);
    for (int i = 0; i < st.eigenvalues.size(); ++i) {
        const double re = st.eigenvalues[i].real();
        const bool matches = std::abs(re + 1.0) < 1e-10 || std::abs(re + 1.5) < 1e-10;
        CHECK(matches);
    }
    CHECK(st.stable);
    CHECK(st.goldstone_count == 0);
}

TEST_CASE("stability: below-threshold pump-only state is stable") {
    SystemParams p = comb_test_params();
    const double P = power_for_flux(p, 0.3);
    const StabilitySpectrum st = stability_eigenvalues(p, pump_only_roots(p, P)[0]);
    CHECK(st.stable);
    CHECK(st.max_real_part < 0.0);
}

TEST_CASE("stability: comb state has exactly one Goldstone mode") {
    SystemParams p = comb_test_params();
    ThresholdOptions topt;
    topt.P_min = power_for_flux(p, 1e-3);
    topt.P_max = power_for_flux(p, 1e3);
    const ThresholdResult th = threshold(p, topt);
    const ClassicalState comb = comb_at(p, 1.13 * th.P_th, th.k_star);
    const StabilitySpectrum st = stability_eigenvalues(p, comb);
    CHECK(st.goldstone_count == 1);
    for (int i = 0; i < st.eigenvalues.size(); ++i)
        if (st.goldstone[i])
            CHECK(std::abs(st.eigenvalues[i]) <= 1e-9 * p.kappa_max());
    CHECK(st.stable);
}

TEST_CASE("sweep_pump: below-threshold grid yields one pump-only branch") {
    SystemParams p = comb_test_params();
    std::vector<double> Ps;
    for (double f = 0.1; f <= 0.6; f += 0.1) Ps.push_back(power_for_flux(p, f));
    auto branches = sweep_pump(p, Ps);
    REQUIRE(branches.size() == 1);
    REQUIRE(branches[0].points.size() == Ps.size());
    for (const auto& pt : branches[0].points) {
        CHECK(pt.stable);
        for (int k = 1; k <= p.M; ++k) CHECK(std::abs(pt.state.a(k)) <= 1e-10);
    }
}

TEST_CASE("sweep_pump across threshold grows sidebands continuously") {
    SystemParams p = comb_test_params();
    ThresholdOptions topt;
    topt.P_min = power_for_flux(p, 1e-3);
    topt.P_max = power_for_flux(p, 1e3);
    const double P_th = threshold(p, topt).P_th;
    std::vector<double> Ps;
    for (double r = 0.90; r <= 1.30001; r += 0.05) Ps.push_back(r * P_th);
    auto branches = sweep_pump(p, Ps);
    const auto& up = branches[0];
    REQUIRE(up.points.size() == Ps.size());
    std::vector<double> side;
    for (const auto& pt : up.points) side.push_back(std::norm(pt.state.a(1)));
    CHECK(side.front() <= 1e-10);
    CHECK(side.back() > 1e-3 * std::norm(up.points.back().state.a(0)));
    // |A_1|^2 grows from ~0 monotonically just past threshold
    for (std::size_t i = 3; i < side.size(); ++i) CHECK(side[i] >= side[i - 1] * 0.99);
}

TEST_CASE("sweep_pump reports both branches in the bistable window") {
    SystemParams p = make_params(1, 2.0, 1.6, std::sqrt(3.0) * 2.0, -20.0, 0.5, 0.0);
    // locate the three-root window first
    double lo = -1.0, hi = -1.0;
    for (double f = 0.5; f < 50.0; f *= 1.05) {
        const double P = power_for_flux(p, f);
        if (pump_only_roots(p, P).size() == 3) {
            if (lo < 0.0) lo = P;
            hi = P;
        }
    }
    REQUIRE(lo > 0.0);
    REQUIRE(hi > lo);

    std::vector<double> Ps;
    for (int i = 0; i < 12; ++i) Ps.push_back(0.6 * lo + (1.6 * hi - 0.6 * lo) * i / 11.0);
    auto branches = sweep_pump(p, Ps);
    REQUIRE(branches.size() == 2);

    int distinct_points = 0;
    for (const auto& up_pt : branches[0].points) {
        for (const auto& dn_pt : branches[1].points) {
            if (up_pt.P != dn_pt.P) continue;
            const double d = std::abs(std::norm(up_pt.state.a(0)) - std::norm(dn_pt.state.a(0)));
            if (d > 1e-6 * std::max(1.0, std::norm(up_pt.state.a(0)))) {
                ++distinct_points;
                CHECK(up_pt.stable);
                CHECK(dn_pt.stable);
                // both are genuine steady states: independent residual oracle
                CHECK(residual_by_quadruples(p, up_pt.state, up_pt.P) <=
                      1e-9 * std::max(1.0, up_pt.state.amps.cwiseAbs().maxCoeff()));
                CHECK(residual_by_quadruples(p, dn_pt.state, dn_pt.P) <=
                      1e-9 * std::max(1.0, dn_pt.state.amps.cwiseAbs().maxCoeff()));
            }
        }
    }
    CHECK(distinct_points >= 2);
}
