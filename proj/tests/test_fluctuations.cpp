#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "kerrcomb/fluctuations.hpp"

using namespace kerrcomb;

namespace {

double power_for_flux(const SystemParams& p, double flux) { return flux * kHbar * p.pump_omega(); }

ClassicalState random_state(const SystemParams& p, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    ClassicalState s(p.M);
    for (int i = 0; i < p.n_modes(); ++i) s.amps[i] = Complex(gauss(rng), gauss(rng));
    return s;
}

// central finite differences of the RHS in quadrature coordinates
Eigen::MatrixXd fd_drift(const SystemParams& p, const ClassicalState& s) {
    const int n = p.n_modes();
    const double h = 1e-6 * std::max(1.0, s.amps.cwiseAbs().maxCoeff());
    Eigen::MatrixXd A(2 * n, 2 * n);
    for (int m = 0; m < n; ++m) {
        for (int comp = 0; comp < 2; ++comp) {
            // quadrature step x_m -> x_m +/- h corresponds to A_m +/- h/2
            const Complex dA = comp == 0 ? Complex(h / 2, 0.0) : Complex(0.0, h / 2);
            ClassicalState sp = s, sm = s;
            sp.amps[m] += dA;
            sm.amps[m] -= dA;
            const Eigen::VectorXcd Fp = coupled_mode_rhs(p, sp, 0.0);
            const Eigen::VectorXcd Fm = coupled_mode_rhs(p, sm, 0.0);
            for (int j = 0; j < n; ++j) {
                const Complex dF = (Fp[j] - Fm[j]) / (2.0 * h);
                A(2 * j, 2 * m + comp) = 2.0 * dF.real();
                A(2 * j + 1, 2 * m + comp) = 2.0 * dF.imag();
            }
        }
    }
    return A;
}

// Hand-derived output spectrum of the two-mode parametric block below
// threshold: modes +/-k coupled by mu = g A0^2 at effective detuning
// Delta = delta_k - 2 g |A0|^2, all other modes dark. Evaluates the noise of
// Y = c_p x_+^{theta_p} + c_m x_-^{theta_m} by explicit input-output algebra,
// independent of the matrix-resolvent implementation path.
struct TwoModeOracle {
    double kappa, kappa_ext, Delta;
    Complex mu;

    double spectrum(double Omega, double c_p, double theta_p, double c_m,
                    double theta_m) const {
        const double ki = kappa - kappa_ext;
        auto coeffs = [&](double w) {
            const Complex iw(0.0, w);
            const Complex D = (iw + 0.5 * kappa) * (iw + 0.5 * kappa) + Delta * Delta -
                              std::norm(mu);
            const Complex f1 = kappa_ext * (iw + 0.5 * kappa - Complex(0.0, Delta)) / D - 1.0;
            const Complex g1 = -Complex(0.0, 1.0) * std::conj(mu) * kappa_ext / D;
            const Complex f3 =
                std::sqrt(kappa_ext * ki) * (iw + 0.5 * kappa - Complex(0.0, Delta)) / D;
            const Complex g3 = -Complex(0.0, 1.0) * std::conj(mu) * std::sqrt(kappa_ext * ki) / D;
            const Complex ep = std::exp(Complex(0.0, -theta_p));
            const Complex em = std::exp(Complex(0.0, -theta_m));
            const double sum = std::norm(c_p * ep * f1 + c_m * std::conj(em) * g1) +
                               std::norm(c_m * em * f1 + c_p * std::conj(ep) * g1) +
                               std::norm(c_p * ep * f3 + c_m * std::conj(em) * g3) +
                               std::norm(c_m * em * f3 + c_p * std::conj(ep) * g3);
            return sum;
        };
        return 0.5 * (coeffs(Omega) + coeffs(-Omega));
    }
};

}  // namespace

TEST_CASE("drift matrix: empty cavity is block diagonal with the Langevin blocks") {
    SystemParams p = make_params(2, 2.0, 1.5, 0.7, 0.3, 0.0, 0.0);
    ClassicalState s(p.M);
    const Eigen::MatrixXd A = drift_matrix(p, s);
    for (int k = -2; k <= 2; ++k) {
        const int ix = x_index(k, 2), ip = p_index(k, 2);
        CHECK_THAT(A(ix, ix), Catch::Matchers::WithinAbs(-1.0, 1e-14));
        CHECK_THAT(A(ip, ip), Catch::Matchers::WithinAbs(-1.0, 1e-14));
        CHECK_THAT(A(ix, ip), Catch::Matchers::WithinAbs(p.detuning_at(k), 1e-14));
        CHECK_THAT(A(ip, ix), Catch::Matchers::WithinAbs(-p.detuning_at(k), 1e-14));
    }
    // off-block entries vanish
    CHECK_THAT(A.cwiseAbs().sum(),
               Catch::Matchers::WithinRel(10.0 + 2.0 * [&] {
                   double s2 = 0.0;
                   for (int k = -2; k <= 2; ++k) s2 += std::abs(p.detuning_at(k));
                   return s2;
               }(), 1e-12));
}

TEST_CASE("drift matrix matches the finite-difference Jacobian") {
    SystemParams p = make_params(2, 2.0, 1.5, -0.3, 0.4, 0.8, 0.0);
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 10; ++rep) {
        const ClassicalState s = random_state(p, rng, 1.2);
        const Eigen::MatrixXd A = drift_matrix(p, s);
        const Eigen::MatrixXd F = fd_drift(p, s);
        const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
        CHECK((A - F).cwiseAbs().maxCoeff() <= 1e-5 * scale);
    }
}

TEST_CASE("pump-only drift carries the parametric pairing block") {
    SystemParams p = make_params(1, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    const double P = power_for_flux(p, 1.5);
    const ClassicalState s = pump_only_roots(p, P)[0];
    const Eigen::MatrixXd A = drift_matrix(p, s);
    Eigen::Matrix2d block;
    block << A(x_index(1, 1), x_index(-1, 1)), A(x_index(1, 1), p_index(-1, 1)),
        A(p_index(1, 1), x_index(-1, 1)), A(p_index(1, 1), p_index(-1, 1));
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(block);
    const double gain = p.g * std::norm(s.a(0));
    CHECK_THAT(svd.singularValues()[0], Catch::Matchers::WithinRel(gain, 1e-10));
    CHECK_THAT(svd.singularValues()[1], Catch::Matchers::WithinRel(gain, 1e-10));
}

TEST_CASE("passive cavity preserves vacuum at every analysis frequency") {
    SystemParams p = make_params(2, 2.0, 1.5, 0.4, 0.7, 0.0, 0.0);
    p.kappa_total[0] = 3.0;
    p.kappa_ext[0] = 1.1;
    ClassicalState s(p.M);
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> logw(-2.0, 2.0);
    for (int i = 0; i < 20; ++i) {
        const double omega = std::pow(10.0, logw(rng));
        const NoiseSpectrum spec = output_spectrum(p, s, omega);
        CHECK((spec.S - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("cavity filtering: spectrum approaches vacuum far outside the linewidth") {
    SystemParams p = make_params(1, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    const double P = power_for_flux(p, 1.8);
    const ClassicalState s = pump_only_roots(p, P)[0];
    const NoiseSpectrum spec = output_spectrum(p, s, 1e5 * p.kappa_max());
    CHECK((spec.S - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("output spectra are symmetric positive semidefinite") {
    SystemParams p = make_params(2, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    for (double flux : {0.4, 1.2, 2.2}) {
        const double P = power_for_flux(p, flux);
        const ClassicalState s = pump_only_roots(p, P)[0];
        for (double omega : {0.05, 0.7, 3.0}) {
            const NoiseSpectrum spec = output_spectrum(p, s, omega);
            CHECK((spec.S - spec.S.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spec.S);
            CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
        }
    }
}

TEST_CASE("two-mode squeezing below threshold matches the analytic oracle") {
    SystemParams p = make_params(1, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    ThresholdOptions topt;
    topt.P_min = power_for_flux(p, 1e-3);
    topt.P_max = power_for_flux(p, 1e3);
    const double P = 0.9 * threshold(p, topt).P_th;
    const ClassicalState s = pump_only_roots(p, P)[0];

    TwoModeOracle oracle;
    oracle.kappa = 2.0;
    oracle.kappa_ext = 1.6;
    oracle.Delta = p.detuning_at(1) - 2.0 * p.g * std::norm(s.a(0));
    oracle.mu = p.g * s.a(0) * s.a(0);

    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    bool dips_below_vacuum = false;
    for (double omega : {0.02, 0.3, 1.0, 2.5, 8.0}) {
        const NoiseSpectrum spec = output_spectrum(p, s, omega);
        for (int rep = 0; rep < 6; ++rep) {
            const double tp = rep == 0 ? 0.0 : angle(rng);
            const double tm = rep == 0 ? 0.0 : angle(rng);
            const double numeric = pair_quadrature_noise(spec, 1, tp, tm);
            const double analytic =
                oracle.spectrum(omega, 1.0 / std::sqrt(2.0), tp, -1.0 / std::sqrt(2.0), tm);
            CHECK_THAT(numeric, Catch::Matchers::WithinRel(analytic, 1e-6));
        }
        // scan the squeezing angle for a sub-vacuum combination
        for (double t = -M_PI; t < M_PI; t += 0.1)
            if (pair_quadrature_noise(spec, 1, t, t) < 0.98) dips_below_vacuum = true;
    }
    CHECK(dips_below_vacuum);
}

TEST_CASE("coherent sidebands sit at shot noise") {
    // no Kerr coupling: spectrum is vacuum; bright seeded sidebands read 0 dB
    SystemParams p = make_params(2, 2.0, 1.5, 0.1, 0.2, 0.0, 0.0);
    ClassicalState s(p.M);
    s.pump_power_at_solution = power_for_flux(p, 2.0);
    s.a(0) = 1.1;
    s.a(1) = 0.4;
    s.a(-1) = Complex(0.3, 0.2);
    s.a(2) = Complex(0.0, 0.25);
    s.a(-2) = 0.2;
    const NoiseSpectrum spec = output_spectrum(p, s, 0.8);
    const NoiseReport r1 = intensity_diff_noise(p, s, spec, 1);
    CHECK_THAT(r1.dB, Catch::Matchers::WithinAbs(0.0, 1e-9));
    const NoiseReport rc = carlos_noise(p, s, spec, 2);
    CHECK_THAT(rc.dB, Catch::Matchers::WithinAbs(0.0, 1e-9));
    CHECK_THAT(rc.snl, Catch::Matchers::WithinRel(
                           std::norm(output_amplitude(p, s, 1)) +
                               std::norm(output_amplitude(p, s, -1)) +
                               4.0 * (std::norm(output_amplitude(p, s, 2)) +
                                      std::norm(output_amplitude(p, s, -2))),
                           1e-12));
}

TEST_CASE("dark modes are rejected") {
    SystemParams p = make_params(2, 2.0, 1.6, 0.0, 4.0, 0.5, 0.0);
    const double P = power_for_flux(p, 0.5);
    const ClassicalState s = pump_only_roots(p, P)[0];
    const NoiseSpectrum spec = output_spectrum(p, s, 0.8);
    CHECK_THROWS_AS(intensity_diff_noise(p, s, spec, 1), DomainError);
    CHECK_THROWS_WITH(intensity_diff_noise(p, s, spec, 1),
                      Catch::Matchers::ContainsSubstring("dark mode"));
    CHECK_THROWS_AS(carlos_noise(p, s, spec, 2), DomainError);
}

namespace {

// random PSD spectrum plus bright random amplitudes, for decomposition tests
struct SyntheticProblem {
    SystemParams params;
    ClassicalState state;
    NoiseSpectrum spec;
};

SyntheticProblem random_problem(int M, std::mt19937_64& rng) {
    SyntheticProblem sp{make_params(M, 2.0, 1.5, 0.0, 0.0, 0.0, 0.0), ClassicalState(M), {}};
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> mag(0.3, 1.5);
    sp.state.pump_power_at_solution = mag(rng) * kHbar * sp.params.pump_omega();
    for (int k = -M; k <= M; ++k)
        sp.state.a(k) = std::polar(mag(rng), gauss(rng));
    const int n = 2 * (2 * M + 1);
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B(i, j) = gauss(rng);
    sp.spec.omega = 1.0;
    sp.spec.S = B * B.transpose() / n + 0.1 * Eigen::MatrixXd::Identity(n, n);
    return sp;
}

}  // namespace

TEST_CASE("variance decomposition identity on random PSD spectra") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 25; ++rep) {
        const SyntheticProblem sp = random_problem(3, rng);
        for (int M_meas : {1, 2, 3}) {
            const VarianceDecomposition d =
                variance_decomposition(sp.params, sp.state, sp.spec, M_meas);
            CHECK(d.identity_residual <= 1e-12 * std::max(1.0, std::abs(d.var_c_snu)));
            // the carlos_noise selector agrees with the decomposition total
            const NoiseReport rc = carlos_noise(sp.params, sp.state, sp.spec, M_meas);
            CHECK_THAT(rc.variance_snu, Catch::Matchers::WithinRel(d.var_c_snu, 1e-10));
        }
    }
}

TEST_CASE("block-structured spectra have no multipartite covariance") {
    // correlations only inside +/-k pairs: build S block diagonal over pairs
    std::mt19937_64 rng(21);
    SyntheticProblem sp = random_problem(2, rng);
    const int n = sp.spec.S.rows();
    Eigen::MatrixXd masked = Eigen::MatrixXd::Zero(n, n);
    auto block_of = [&](int row) {
        const int mode = row / 2 - 2;  // mode index for M = 2
        return std::abs(mode);
    };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (block_of(i) == block_of(j)) masked(i, j) = sp.spec.S(i, j);
    sp.spec.S = masked;  // still symmetric; PSD not needed for this identity
    const VarianceDecomposition d = variance_decomposition(sp.params, sp.state, sp.spec, 2);
    CHECK(d.cov_mp_snu == 0.0);
    CHECK(d.identity_residual <= 1e-13);
}

TEST_CASE("detection chain formula and limits") {
    // -10 dB squeezing seen through eta = 0.72
    const double v = apply_detection_chain(0.1, 0.72, 0.0);
    CHECK_THAT(10.0 * std::log10(v), Catch::Matchers::WithinAbs(-4.54, 0.01));
    // shot noise is invariant under loss
    CHECK_THAT(apply_detection_chain(1.0, 0.31, 0.0), Catch::Matchers::WithinAbs(1.0, 1e-15));
    CHECK_THAT(apply_detection_chain(1.0, 0.72, 0.07), Catch::Matchers::WithinAbs(1.07, 1e-15));
    // identity chain
    CHECK(apply_detection_chain(0.37, 1.0, 0.0) == 0.37);
    CHECK_THROWS_AS(apply_detection_chain(1.0, 1.3, 0.0), ConfigError);
    CHECK_THROWS_AS(apply_detection_chain(1.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("loss pulls variances toward shot noise monotonically") {
    for (double v : {0.1, 0.5, 0.9}) {
        double prev = v;
        for (double eta : {0.9, 0.6, 0.3}) {
            const double vm = apply_detection_chain(v, eta, 0.0);
            CHECK(vm > prev);
            CHECK(vm < 1.0);
            prev = vm;
        }
    }
    for (double v : {1.5, 3.0}) {
        const double vm = apply_detection_chain(v, 0.5, 0.0);
        CHECK(vm < v);
        CHECK(vm > 1.0);
    }
}

TEST_CASE("detection chain on the spectrum matches detection on the report") {
    std::mt19937_64 rng(31);
    const SyntheticProblem sp = random_problem(2, rng);
    const double eta = 0.72, er = 0.04;
    const NoiseSpectrum specd = apply_detection_chain(sp.spec, eta, er);
    const NoiseReport before = intensity_diff_noise(sp.params, sp.state, sp.spec, 1);
    const NoiseReport after_spec = intensity_diff_noise(sp.params, sp.state, specd, 1);
    const NoiseReport after_rep = apply_detection_chain(before, eta, er);
    CHECK_THAT(after_spec.variance_snu,
               Catch::Matchers::WithinRel(after_rep.variance_snu, 1e-12));
    // the electronic-noise correction inverts the additive term only
    const NoiseReport corrected = remove_electronic_noise(after_rep, er);
    CHECK_THAT(corrected.variance_snu,
               Catch::Matchers::WithinRel(apply_detection_chain(before.variance_snu, eta, 0.0),
                                          1e-12));
}
