#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kerrcomb/errors.hpp"

namespace kerrcomb {

inline constexpr double kHbar = 1.054571817e-34;         // J s
inline constexpr double kSpeedOfLight = 299792458.0;     // m / s

using Complex = std::complex<double>;

// Parameters of the (2M+1)-mode Kerr resonator model. Mode index k runs over
// [-M, M] with k = 0 the pumped mode; per-mode arrays are stored in that
// order (array slot i holds mode k = i - M). Amplitudes are in sqrt(photon)
// units so |A_k|^2 is an intracavity photon number and all rates are rad/s.
struct SystemParams {
    int M = 2;
    std::vector<double> kappa_total;   // total energy decay rate per mode
    std::vector<double> kappa_ext;     // external (waveguide) coupling rate
    std::vector<double> detuning;      // pump-cavity + dispersion detuning
    double g = 9.7;                    // single-photon Kerr rate, rad/s
    double pump_power = 0.060;         // W
    double pump_wavelength = 1560.053e-9;  // m
    double eta_F = 0.90;
    double eta_g = 0.94;
    double eta_opt = 0.97;
    double eta_pd = 0.88;
    double electronic_noise_rel = 0.0;  // relative to shot noise, linear

    int n_modes() const { return 2 * M + 1; }
    int index(int k) const { return k + M; }

    double kappa_total_at(int k) const { return kappa_total[index(k)]; }
    double kappa_ext_at(int k) const { return kappa_ext[index(k)]; }
    double kappa_int_at(int k) const { return kappa_total_at(k) - kappa_ext_at(k); }
    double detuning_at(int k) const { return detuning[index(k)]; }

    double kappa_max() const {
        double m = 0.0;
        for (double v : kappa_total) m = std::max(m, v);
        return m;
    }

    double eta_total() const { return eta_F * eta_g * eta_opt * eta_pd; }
    double pump_omega() const { return 2.0 * M_PI * kSpeedOfLight / pump_wavelength; }
    // Input photon flux, photons/s.
    double pump_photon_flux() const { return pump_power / (kHbar * pump_omega()); }
    double pump_photon_flux_at(double power_W) const { return power_W / (kHbar * pump_omega()); }
    // Real drive amplitude s_in = sqrt(flux); the pump phase gauge is fixed
    // so the drive is real positive.
    double drive_amplitude() const { return std::sqrt(pump_photon_flux()); }
    double drive_amplitude_at(double power_W) const { return std::sqrt(pump_photon_flux_at(power_W)); }
};

inline std::vector<double> flat_mode_array(int M, double value) {
    return std::vector<double>(2 * M + 1, value);
}

// detuning[k] = delta0 + (D2/2) k^2
inline std::vector<double> parabolic_detuning(int M, double delta0, double D2) {
    std::vector<double> d(2 * M + 1);
    for (int k = -M; k <= M; ++k) d[k + M] = delta0 + 0.5 * D2 * double(k) * double(k);
    return d;
}

inline SystemParams make_params(int M, double kappa_total, double kappa_ext,
                                double delta0, double D2, double g, double pump_power) {
    SystemParams p;
    p.M = M;
    p.kappa_total = flat_mode_array(M, kappa_total);
    p.kappa_ext = flat_mode_array(M, kappa_ext);
    p.detuning = parabolic_detuning(M, delta0, D2);
    p.g = g;
    p.pump_power = pump_power;
    return p;
}

// Defaults reproducing the reference SiN microring: ~630 MHz total linewidth,
// strongly overcoupled (intrinsic Q ~ 1e7), pump at 1560.053 nm, detection
// efficiencies 0.90 * 0.94 * 0.97 * 0.88 ~ 0.72. g is tuned so the predicted
// oscillation threshold lands at the measured 53 mW for this detuning model.
inline SystemParams default_params() {
    const double kappa = 2.0 * M_PI * 630e6;
    SystemParams p = make_params(/*M=*/2, kappa, /*kappa_ext=*/0.969 * kappa,
                                 /*delta0=*/0.0, /*D2=*/2.0 * kappa,
                                 /*g=*/9.71, /*pump_power=*/0.060);
    return p;
}

namespace detail {
inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}
}  // namespace detail

// Returns params unchanged if every invariant holds; throws ConfigError
// naming the first violated invariant. g = 0 is accepted so that the linear
// (no-gain) limits remain expressible.
inline SystemParams validate_params(const SystemParams& p) {
    const std::size_t n = static_cast<std::size_t>(2 * p.M + 1);
    if (p.M < 1) throw ConfigError("M: need at least modes +/-1 (M >= 1)");
    if (p.kappa_total.size() != n) throw ConfigError("kappa_total: expected 2M+1 entries");
    if (p.kappa_ext.size() != n) throw ConfigError("kappa_ext: expected 2M+1 entries");
    if (p.detuning.size() != n) throw ConfigError("detuning: expected 2M+1 entries");
    if (!detail::all_finite(p.kappa_total) || !detail::all_finite(p.kappa_ext) ||
        !detail::all_finite(p.detuning))
        throw ConfigError("mode arrays must be finite");
    for (int k = -p.M; k <= p.M; ++k) {
        if (p.kappa_ext_at(k) <= 0.0)
            throw ConfigError("kappa_ext: external coupling must be positive (mode " +
                              std::to_string(k) + ")");
        if (p.kappa_ext_at(k) > p.kappa_total_at(k))
            throw ConfigError("kappa_ext: must not exceed kappa_total (mode " +
                              std::to_string(k) + ")");
    }
    if (!(p.g >= 0.0) || !std::isfinite(p.g))
        throw ConfigError("g: Kerr rate must be non-negative");
    if (!(p.pump_power >= 0.0)) throw ConfigError("pump_power: must be non-negative");
    if (!(p.pump_wavelength > 0.0)) throw ConfigError("pump_wavelength: must be positive");
    auto check_eta = [](double v, const char* name) {
        if (!(v > 0.0) || v > 1.0)
            throw ConfigError(std::string(name) + ": efficiency must lie in (0, 1]");
    };
    check_eta(p.eta_F, "eta_F");
    check_eta(p.eta_g, "eta_g");
    check_eta(p.eta_opt, "eta_opt");
    check_eta(p.eta_pd, "eta_pd");
    if (!(p.electronic_noise_rel >= 0.0))
        throw ConfigError("electronic_noise_rel: must be non-negative");
    return p;
}

// One classical intracavity comb: complex amplitude per mode in sqrt(photon)
// units, plus the pump power it solves for.
struct ClassicalState {
    Eigen::VectorXcd amps;              // size 2M+1, slot i holds mode i - M
    double pump_power_at_solution = 0.0;

    ClassicalState() = default;
    explicit ClassicalState(int M) : amps(Eigen::VectorXcd::Zero(2 * M + 1)) {}

    int M() const { return (static_cast<int>(amps.size()) - 1) / 2; }
    Complex a(int k) const { return amps[k + M()]; }
    Complex& a(int k) { return amps[k + M()]; }
};

inline void validate_state(const SystemParams& p, const ClassicalState& s) {
    if (s.amps.size() != p.n_modes())
        throw ConfigError("state: expected 2M+1 amplitudes");
    if (!s.amps.allFinite()) throw ConfigError("state: amplitudes must be finite");
}

}  // namespace kerrcomb
