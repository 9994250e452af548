#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kerrcomb/drift.hpp"
#include "kerrcomb/noise_report.hpp"
#include "kerrcomb/steady_state.hpp"

namespace kerrcomb {

// Symmetrized output quadrature spectral covariance at one analysis frequency,
// normalized so vacuum inputs give the identity. Real symmetric in the
// quadrature basis because both +Omega and -Omega contributions are folded in.
struct NoiseSpectrum {
    double omega = 0.0;  // rad/s
    Eigen::MatrixXd S;

    int n_modes() const { return static_cast<int>(S.rows()) / 2; }
};

// Output flux amplitude seen by the detectors: sqrt(kappa_ext,k) A_k, with
// the reflected drive subtracted on the pump mode only.
inline Complex output_amplitude(const SystemParams& params, const ClassicalState& state, int k) {
    Complex a = std::sqrt(params.kappa_ext_at(k)) * state.a(k);
    if (k == 0) a -= params.drive_amplitude_at(state.pump_power_at_solution);
    return a;
}

// Input-output spectrum: with T = (i Omega I - A)^{-1},
//   v_out = [K_ext T K_ext - I] v_in + [K_ext T K_int] v_loss,
// vacuum-unit white inputs, S = Re(M_in M_in^H + M_loss M_loss^H).
inline NoiseSpectrum output_spectrum(const SystemParams& params, const ClassicalState& state,
                                     double omega) {
    if (!(omega > 0.0))
        throw ConfigError("output_spectrum: analysis frequency must be positive");
    const StabilitySpectrum st = compute_stability(params, state);
    if (!st.stable) throw DomainError("unstable state");

    const int n = params.n_modes();
    const Eigen::MatrixXd A = drift_matrix(params, state);
    Eigen::VectorXd kext(2 * n), kint(2 * n);
    for (int i = 0; i < n; ++i) {
        const int k = i - params.M;
        kext[2 * i] = kext[2 * i + 1] = std::sqrt(params.kappa_ext_at(k));
        kint[2 * i] = kint[2 * i + 1] = std::sqrt(std::max(0.0, params.kappa_int_at(k)));
    }

    Eigen::MatrixXcd iwA = -A.cast<Complex>();
    iwA.diagonal().array() += Complex(0.0, omega);
    const Eigen::MatrixXcd T = iwA.partialPivLu().solve(Eigen::MatrixXcd::Identity(2 * n, 2 * n));

    Eigen::MatrixXcd Min = kext.asDiagonal().toDenseMatrix().cast<Complex>() * T *
                           kext.asDiagonal().toDenseMatrix().cast<Complex>();
    Min -= Eigen::MatrixXcd::Identity(2 * n, 2 * n);
    const Eigen::MatrixXcd Mloss = kext.asDiagonal().toDenseMatrix().cast<Complex>() * T *
                                   kint.asDiagonal().toDenseMatrix().cast<Complex>();

    NoiseSpectrum out;
    out.omega = omega;
    const Eigen::MatrixXd S = (Min * Min.adjoint() + Mloss * Mloss.adjoint()).real();
    out.S = 0.5 * (S + S.transpose());
    return out;
}

// Selector for the amplitude quadrature of mode k at angle theta, weighted by
// the output flux amplitude: the linearized photocurrent is |A_out| x^theta.
inline Eigen::VectorXd amplitude_selector(const SystemParams& params, const ClassicalState& state,
                                          int k) {
    const int M = params.M;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(2 * params.n_modes());
    const Complex aout = output_amplitude(params, state, k);
    const double theta = std::arg(aout);
    u[x_index(k, M)] = std::abs(aout) * std::cos(theta);
    u[p_index(k, M)] = std::abs(aout) * std::sin(theta);
    return u;
}

inline double selector_variance(const NoiseSpectrum& spec, const Eigen::VectorXd& u) {
    return u.dot(spec.S * u);
}

// Noise of the rotated-quadrature combination (x_k^{theta_k} - x_{-k}^{theta_mk})/sqrt(2);
// equals 1 for vacuum. This is the two-mode squeezing combination that an
// intensity-difference measurement projects onto for bright symmetric beams.
inline double pair_quadrature_noise(const NoiseSpectrum& spec, int k, double theta_k,
                                    double theta_mk) {
    const int Mm = (spec.n_modes() - 1) / 2;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(spec.S.rows());
    u[x_index(k, Mm)] = std::cos(theta_k) / std::sqrt(2.0);
    u[p_index(k, Mm)] = std::sin(theta_k) / std::sqrt(2.0);
    u[x_index(-k, Mm)] = -std::cos(theta_mk) / std::sqrt(2.0);
    u[p_index(-k, Mm)] = -std::sin(theta_mk) / std::sqrt(2.0);
    return selector_variance(spec, u);
}

namespace detail {

inline void require_bright(const SystemParams& params, const ClassicalState& state, int k) {
    const double flux = std::norm(output_amplitude(params, state, k));
    const double pump_flux = params.pump_photon_flux_at(state.pump_power_at_solution);
    if (flux < 1e-12 * std::max(pump_flux, 1.0))
        throw DomainError("dark mode (k = " + std::to_string(k) + ")");
}

}  // namespace detail

// Var(n_k - n_{-k}) normalized to the two-beam shot-noise level.
inline NoiseReport intensity_diff_noise(const SystemParams& params, const ClassicalState& state,
                                        const NoiseSpectrum& spec, int k) {
    detail::require_bright(params, state, k);
    detail::require_bright(params, state, -k);
    const Eigen::VectorXd u = amplitude_selector(params, state, k) -
                              amplitude_selector(params, state, -k);
    const double raw = selector_variance(spec, u);
    const double snl = std::norm(output_amplitude(params, state, k)) +
                       std::norm(output_amplitude(params, state, -k));
    return make_noise_report("var(n_" + std::to_string(k) + "-n_" + std::to_string(-k) + ")",
                             raw, snl, "|A_out,k|^2 + |A_out,-k|^2");
}

// Var(C) with C = sum_k k n_k restricted to |k| <= M_meas, normalized to
// SNL_C = sum k^2 |A_out,k|^2. M_meas < M deliberately traces out the outer
// modes, as the experiment does when it detects only +/-1, +/-2.
inline NoiseReport carlos_noise(const SystemParams& params, const ClassicalState& state,
                                const NoiseSpectrum& spec, int M_meas) {
    if (M_meas < 1 || M_meas > params.M)
        throw ConfigError("carlos_noise: M_meas must lie in [1, M]");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(2 * params.n_modes());
    double snl = 0.0;
    for (int k = -M_meas; k <= M_meas; ++k) {
        if (k == 0) continue;
        detail::require_bright(params, state, k);
        u += double(k) * amplitude_selector(params, state, k);
        snl += double(k) * double(k) * std::norm(output_amplitude(params, state, k));
    }
    const double raw = selector_variance(spec, u);
    return make_noise_report("var(C), M_meas=" + std::to_string(M_meas), raw, snl,
                             "sum k^2 |A_out,k|^2");
}

// Var(C) = Var_BP + Cov_MP split, everything in units of SNL_C so the three
// numbers are directly comparable. Cov_MP uses the pair-exclusion convention
// k != +/-l, the unique one that makes the identity exact; the printed-sum
// variant (k != l only) is also reported.
struct VarianceDecomposition {
    double var_c_snu = 0.0;
    double var_bp_snu = 0.0;
    double cov_mp_snu = 0.0;
    double cov_mp_all_pairs_snu = 0.0;  // k != l convention (double-counts pairs)
    double snl_c = 0.0;
    double identity_residual = 0.0;     // |var_c - var_bp - cov_mp|, same units
};

inline VarianceDecomposition variance_decomposition(const SystemParams& params,
                                                    const ClassicalState& state,
                                                    const NoiseSpectrum& spec, int M_meas) {
    if (M_meas < 1 || M_meas > params.M)
        throw ConfigError("variance_decomposition: M_meas must lie in [1, M]");
    std::vector<Eigen::VectorXd> sel(2 * M_meas + 1);
    double snl_c = 0.0;
    for (int k = -M_meas; k <= M_meas; ++k) {
        if (k != 0) detail::require_bright(params, state, k);
        sel[k + M_meas] = amplitude_selector(params, state, k);
        snl_c += double(k) * double(k) * std::norm(output_amplitude(params, state, k));
    }
    auto cov = [&](int k, int l) { return sel[k + M_meas].dot(spec.S * sel[l + M_meas]); };

    VarianceDecomposition d;
    d.snl_c = snl_c;
    double var_c = 0.0, var_bp = 0.0, cov_mp = 0.0, cov_all = 0.0;
    for (int k = -M_meas; k <= M_meas; ++k)
        for (int l = -M_meas; l <= M_meas; ++l) {
            const double term = double(k) * double(l) * cov(k, l);
            var_c += term;
            if (k != l) cov_all += term;
            if (k != l && k != -l) cov_mp += term;
        }
    for (int k = 1; k <= M_meas; ++k)
        var_bp += double(k) * double(k) *
                  (cov(k, k) + cov(-k, -k) - 2.0 * cov(k, -k));
    d.var_c_snu = var_c / snl_c;
    d.var_bp_snu = var_bp / snl_c;
    d.cov_mp_snu = cov_mp / snl_c;
    d.cov_mp_all_pairs_snu = cov_all / snl_c;
    d.identity_residual = std::abs(d.var_c_snu - d.var_bp_snu - d.cov_mp_snu);
    return d;
}

// Beam-splitter detection model on SNL-normalized variances:
//   V_meas = eta V + (1 - eta) + electronic_noise_rel.
inline double apply_detection_chain(double variance_snu, double eta_total,
                                    double electronic_noise_rel) {
    if (!(eta_total > 0.0) || eta_total > 1.0)
        throw ConfigError("apply_detection_chain: eta must lie in (0, 1]");
    if (electronic_noise_rel < 0.0)
        throw ConfigError("apply_detection_chain: electronic noise must be non-negative");
    return eta_total * variance_snu + (1.0 - eta_total) + electronic_noise_rel;
}

inline NoiseReport apply_detection_chain(const NoiseReport& in, double eta_total,
                                         double electronic_noise_rel) {
    NoiseReport out = in;
    out.label = in.label + " [detected]";
    out.variance_snu = apply_detection_chain(in.variance_snu, eta_total, electronic_noise_rel);
    out.dB = 10.0 * std::log10(out.variance_snu);
    return out;
}

inline NoiseSpectrum apply_detection_chain(const NoiseSpectrum& in, double eta_total,
                                           double electronic_noise_rel) {
    if (!(eta_total > 0.0) || eta_total > 1.0)
        throw ConfigError("apply_detection_chain: eta must lie in (0, 1]");
    NoiseSpectrum out = in;
    out.S = eta_total * in.S;
    out.S.diagonal().array() += (1.0 - eta_total) + electronic_noise_rel;
    return out;
}

// 4x4 cross-spectrum of the detected photocurrents, channels ordered
// (+1, -1, +2, -2), normalized so coherent beams give diag(|A_out,k|^2).
// This is the bridge into the dsp trace synthesizer.
inline Eigen::Matrix4d photocurrent_cross_spectrum(const SystemParams& params,
                                                   const ClassicalState& state,
                                                   const NoiseSpectrum& spec) {
    if (params.M < 2)
        throw ConfigError("photocurrent_cross_spectrum: needs modes up to +/-2");
    const int modes[4] = {1, -1, 2, -2};
    std::array<Eigen::VectorXd, 4> sel;
    for (int i = 0; i < 4; ++i) {
        detail::require_bright(params, state, modes[i]);
        sel[i] = amplitude_selector(params, state, modes[i]);
    }
    Eigen::Matrix4d C;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) C(i, j) = sel[i].dot(spec.S * sel[j]);
    return 0.5 * (C + C.transpose());
}

// The experiment's stated correction: strip electronic noise, keep the loss.
inline NoiseReport remove_electronic_noise(const NoiseReport& in, double electronic_noise_rel) {
    NoiseReport out = in;
    out.variance_snu = in.variance_snu - electronic_noise_rel;
    if (out.variance_snu <= 0.0)
        throw NumericalError("remove_electronic_noise: corrected variance not positive");
    out.dB = 10.0 * std::log10(out.variance_snu);
    out.label = in.label + " [electronic-noise corrected]";
    return out;
}

}  // namespace kerrcomb
