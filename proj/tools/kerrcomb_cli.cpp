// kerrcomb: command-line driver for the Kerr-comb quantum noise toolkit.
// Subcommands: threshold, sweep, oracle, dsp {synth, calibrate, process},
// print-config. Exit codes: 0 success, 1 config error, 2 domain condition,
// 3 numerical failure.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <thread>

#include <CLI11.hpp>

#include "kerrcomb/config.hpp"
#include "kerrcomb/dsp.hpp"
#include "kerrcomb/fluctuations.hpp"
#include "kerrcomb/fock.hpp"

namespace fs = std::filesystem;
using namespace kerrcomb;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    double omega_hz = 0.0;  // 0 = keep config value
    std::uint64_t seed = 0;
    int threads = 0;
};

RunConfig load_with_overrides(const CommonFlags& f) {
    RunConfig cfg = load_config(f.config_path);
    if (!f.out_dir.empty()) cfg.output_dir = f.out_dir;
    if (f.omega_hz > 0.0) {
        cfg.sweep.omega_hz = f.omega_hz;
        cfg.dsp.omega_hz = f.omega_hz;
    }
    if (f.seed != 0) cfg.dsp.seed = f.seed;
    if (f.threads > 0) cfg.sweep.threads = f.threads;
    return cfg;
}

void print_kv(const std::string& key, const std::string& value) {
    std::cout << key << "=" << value << "\n";
}

void print_kv(const std::string& key, double value) {
    std::printf("%s=%.12g\n", key.c_str(), value);
}

std::string hash_string(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_threshold(const CommonFlags& flags) {
    const RunConfig cfg = load_with_overrides(flags);
    ThresholdOptions opt;
    opt.P_min = cfg.threshold.p_min_w;
    opt.P_max = cfg.threshold.p_max_w;
    const ThresholdResult th = threshold(cfg.params, opt);
    print_kv("config_hash", hash_string(cfg.config_hash));
    print_kv("p_th_w", th.P_th);
    print_kv("p_th_mw", th.P_th * 1e3);
    print_kv("k_star", double(th.k_star));
    print_kv("pump_intensity_photons", th.pump_intensity);
    return 0;
}

// ---------------------------------------------------------------------------

struct SweepRow {
    double P = 0.0;
    double p_over_pth = 0.0;
    std::string status = "ok";
    bool have_noise = false;
    double var_n1_raw = 0.0, var_n1_det = 0.0;
    bool n1_ok = false;
    double var_n2_raw = 0.0, var_n2_det = 0.0;
    bool n2_ok = false;
    double varc_raw = 0.0, varc_det = 0.0;
    double varbp_raw = 0.0, varbp_det = 0.0;
    double covmp_raw = 0.0, covmp_det = 0.0;
    bool c_ok = false;
};

std::string db_or_nan(bool ok, double v) {
    if (!ok || !std::isfinite(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void write_branch_csv(const std::string& path, const Branch& br, double p_th, int M) {
    std::ofstream f(path);
    f << "P_W,P_over_Pth,stable";
    for (int k = -M; k <= M; ++k) f << ",ReA_" << k << ",ImA_" << k;
    f << "\n";
    f << std::setprecision(12);
    for (const auto& pt : br.points) {
        f << pt.P << "," << (p_th > 0.0 ? pt.P / p_th : std::nan("")) << ","
          << (pt.stable ? 1 : 0);
        for (int k = -M; k <= M; ++k)
            f << "," << pt.state.a(k).real() << "," << pt.state.a(k).imag();
        f << "\n";
    }
}

int cmd_sweep(const CommonFlags& flags) {
    const RunConfig cfg = load_with_overrides(flags);
    fs::create_directories(cfg.output_dir);

    double p_th = 0.0;
    int k_star = 1;
    try {
        ThresholdOptions opt;
        opt.P_min = cfg.threshold.p_min_w;
        opt.P_max = cfg.threshold.p_max_w;
        const ThresholdResult th = threshold(cfg.params, opt);
        p_th = th.P_th;
        k_star = th.k_star;
    } catch (const DomainError&) {
        if (!cfg.sweep.p_over_pth.empty())
            throw;  // a threshold-relative grid needs a threshold
    }

    std::vector<double> P_list = cfg.sweep.p_watts;
    for (double r : cfg.sweep.p_over_pth) P_list.push_back(r * p_th);
    if (P_list.empty()) throw ConfigError("sweep: no power grid configured");
    std::sort(P_list.begin(), P_list.end());

    SweepOptions sopt;
    sopt.k_star = k_star;
    const std::vector<Branch> branches = sweep_pump(cfg.params, P_list, sopt);
    for (const auto& br : branches)
        write_branch_csv(cfg.output_dir + "/branch_" + br.label + ".csv", br, p_th,
                         cfg.params.M);

    // quantum noise along the up branch, dispatched to a small worker pool
    const Branch& up = branches.front();
    const double omega = 2.0 * M_PI * cfg.sweep.omega_hz;
    const double eta = cfg.params.eta_total();
    const double enoise = cfg.params.electronic_noise_rel;
    std::vector<SweepRow> rows(up.points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= rows.size()) return;
            const auto& pt = up.points[i];
            SweepRow& row = rows[i];
            row.P = pt.P;
            row.p_over_pth = p_th > 0.0 ? pt.P / p_th : std::nan("");
            if (!pt.stable) {
                row.status = "unstable";
                continue;
            }
            try {
                const NoiseSpectrum spec = output_spectrum(cfg.params, pt.state, omega);
                try {
                    const NoiseReport r1 = intensity_diff_noise(cfg.params, pt.state, spec, 1);
                    row.var_n1_raw = r1.dB;
                    row.var_n1_det = apply_detection_chain(r1, eta, enoise).dB;
                    row.n1_ok = true;
                } catch (const DomainError&) {
                    row.status = "dark(k=1)";
                }
                if (cfg.params.M >= 2) {
                    try {
                        const NoiseReport r2 =
                            intensity_diff_noise(cfg.params, pt.state, spec, 2);
                        row.var_n2_raw = r2.dB;
                        row.var_n2_det = apply_detection_chain(r2, eta, enoise).dB;
                        row.n2_ok = true;
                    } catch (const DomainError&) {
                        if (row.status == "ok") row.status = "dark(k=2)";
                    }
                }
                try {
                    const VarianceDecomposition d =
                        variance_decomposition(cfg.params, pt.state, spec, cfg.sweep.m_meas);
                    row.varc_raw = 10.0 * std::log10(d.var_c_snu);
                    row.varbp_raw = 10.0 * std::log10(d.var_bp_snu);
                    row.covmp_raw = d.cov_mp_snu;
                    row.varc_det =
                        10.0 * std::log10(apply_detection_chain(d.var_c_snu, eta, enoise));
                    row.varbp_det =
                        10.0 * std::log10(apply_detection_chain(d.var_bp_snu, eta, enoise));
                    row.covmp_det = eta * d.cov_mp_snu;
                    row.c_ok = true;
                } catch (const DomainError&) {
                    if (row.status == "ok") row.status = "dark(C)";
                }
            } catch (const DomainError&) {
                row.status = "unstable";
            }
        }
    };
    const int n_threads = std::max(1, cfg.sweep.threads);
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    const std::string fig_path = cfg.output_dir + "/noise_sweep.csv";
    {
        std::ofstream f(fig_path);
        f << "P_over_Pth,Omega_Hz,var_n1_dB_raw,var_n1_dB_det,var_n2_dB_raw,var_n2_dB_det,"
             "varC_dB_raw,varC_dB_det,varBP_dB_raw,varBP_dB_det,covMP_snu_raw,covMP_snu_det,"
             "status\n";
        for (const auto& r : rows) {
            f << std::setprecision(10) << r.p_over_pth << "," << cfg.sweep.omega_hz << ","
              << db_or_nan(r.n1_ok, r.var_n1_raw) << "," << db_or_nan(r.n1_ok, r.var_n1_det)
              << "," << db_or_nan(r.n2_ok, r.var_n2_raw) << ","
              << db_or_nan(r.n2_ok, r.var_n2_det) << "," << db_or_nan(r.c_ok, r.varc_raw) << ","
              << db_or_nan(r.c_ok, r.varc_det) << "," << db_or_nan(r.c_ok, r.varbp_raw) << ","
              << db_or_nan(r.c_ok, r.varbp_det) << "," << db_or_nan(r.c_ok, r.covmp_raw) << ","
              << db_or_nan(r.c_ok, r.covmp_det) << "," << r.status << "\n";
        }
    }

    print_kv("config_hash", hash_string(cfg.config_hash));
    print_kv("p_th_w", p_th);
    print_kv("k_star", double(k_star));
    print_kv("n_points", double(up.points.size()));
    print_kv("n_branches", double(branches.size()));
    print_kv("noise_csv", fig_path);
    for (const auto& br : branches)
        print_kv("branch_csv_" + br.label, cfg.output_dir + "/branch_" + br.label + ".csv");
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_oracle(const CommonFlags& flags) {
    const RunConfig cfg = load_with_overrides(flags);
    const OracleConfig& oc = cfg.oracle;

    const fock::FockSpace space(oc.M, oc.cutoff, oc.max_dim);
    const fock::FockOperator H = fock::build_fwm_hamiltonian(space, oc.g, oc.detuning);
    const fock::FockOperator C = fock::build_charlie(space);

    print_kv("config_hash", hash_string(cfg.config_hash));
    print_kv("dimension", double(space.dim));

    const double herm = fock::hermiticity_residual(H);
    const double comm = fock::commutator_norm(C, H);
    print_kv("hermiticity_residual", herm);
    print_kv("commutator_C_H", comm);

    std::mt19937_64 rng(oc.seed);
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    double u_res = 0.0;
    for (int i = 0; i < 5; ++i) {
        const fock::FockOperator U = fock::phase_shift_unitary(space, angle(rng));
        const Eigen::MatrixXcd lhs = Eigen::MatrixXcd(U.mat) * Eigen::MatrixXcd(H.mat) *
                                     Eigen::MatrixXcd(U.mat).adjoint();
        u_res = std::max(u_res, (lhs - Eigen::MatrixXcd(H.mat)).cwiseAbs().maxCoeff());
    }
    print_kv("u_theta_invariance_max", u_res);

    // evolution from coherent pump (x) vacuum sidebands over the t grid
    std::vector<Complex> alphas(space.n_modes(), Complex(0.0, 0.0));
    alphas[space.mode_slot(0)] = oc.alpha_pump;
    fock::FockState psi = fock::coherent_state(space, alphas);
    const double c0 = fock::expectation(C, psi);
    const double vc0 = fock::variance(C, psi);
    const double e0 = fock::expectation(H, psi);
    double c_drift = 0.0, vc_drift = 0.0, e_drift = 0.0, leakage = 0.0, norm_drift = 0.0;
    double decomp_res = 0.0;
    double t_prev = 0.0;
    for (double t : oc.t_grid) {
        psi = fock::evolve(space, H, psi, (t - t_prev) / std::max(oc.g, 1e-300));
        t_prev = t;
        c_drift = std::max(c_drift, std::abs(fock::expectation(C, psi) - c0));
        vc_drift = std::max(vc_drift, std::abs(fock::variance(C, psi) - vc0));
        e_drift = std::max(e_drift, std::abs(fock::expectation(H, psi) - e0) /
                                        std::max(1.0, std::abs(e0)));
        leakage = std::max(leakage, fock::boundary_leakage(space, psi));
        norm_drift = std::max(norm_drift, std::abs(psi.norm() - 1.0));
        const auto d = fock::decomposition_check(space, psi, oc.M);
        decomp_res = std::max(decomp_res, d.identity_residual);
    }
    for (int i = 0; i < oc.n_random_states; ++i) {
        const fock::FockState r = fock::random_state(space, rng);
        for (int mm = 1; mm <= oc.M; ++mm)
            decomp_res = std::max(decomp_res, fock::decomposition_check(space, r, mm).identity_residual);
    }

    print_kv("c_mean_drift", c_drift);
    print_kv("c_var_drift", vc_drift);
    print_kv("energy_drift_rel", e_drift);
    print_kv("norm_drift", norm_drift);
    print_kv("boundary_leakage_max", leakage);
    print_kv("boundary_flagged", leakage >= 1e-6 ? 1.0 : 0.0);
    print_kv("decomposition_residual_max", decomp_res);

    const bool pass = herm <= 1e-12 && comm <= 1e-12 && u_res <= 1e-12 && c_drift <= 1e-10 &&
                      vc_drift <= 1e-10 && e_drift <= 1e-8 && norm_drift <= 1e-10 &&
                      decomp_res <= 1e-12;
    print_kv("result", pass ? "pass" : "fail");
    if (!pass) throw NumericalError("oracle residuals exceed thresholds");
    return 0;
}

// ---------------------------------------------------------------------------

Eigen::Matrix4cd injected_target(const DspRunConfig& d) {
    const double d1 = d.dc_levels[0], d2 = d.dc_levels[2];
    if (std::abs(d.dc_levels[1] - d1) > 1e-12 * d1 ||
        std::abs(d.dc_levels[3] - d2) > 1e-12 * d2)
        throw ConfigError("dsp.dc_levels: injected mode needs equal levels within each pair");
    // unit calibration slope: shot variance per channel equals its DC level
    const double v1 = std::pow(10.0, d.pair1_db / 10.0);  // Var(D1)/SNL_D1
    const double v2 = std::pow(10.0, d.pair2_db / 10.0);
    const double c1 = d1 * (1.0 - v1);
    const double c2 = d2 * (1.0 - v2);
    const double snl_c = 2.0 * d1 + 8.0 * d2;
    const double var_c = snl_c * std::pow(10.0, d.varc_db / 10.0);
    const double cov_d1d2 = (var_c - 2.0 * d1 * v1 - 8.0 * d2 * v2) / 4.0;
    const double x = cov_d1d2 / 4.0;
    Eigen::Matrix4cd S;
    S << d1, c1, x, -x,
        c1, d1, -x, x,
        x, -x, d2, c2,
        -x, x, c2, d2;
    return S;
}

dsp::TraceSet synthesize_from_config(const RunConfig& cfg, double* predicted_varc_db) {
    dsp::SynthesisSpec spec;
    spec.acq = cfg.dsp.acq;
    spec.seed = cfg.dsp.seed;
    spec.delay_samples = cfg.dsp.delay_samples;
    spec.dc_levels = cfg.dsp.dc_levels;

    Eigen::Matrix4cd target;
    if (cfg.dsp.synth_mode == "injected") {
        target = injected_target(cfg.dsp);
        if (predicted_varc_db) *predicted_varc_db = cfg.dsp.varc_db;
    } else {
        ThresholdOptions topt;
        topt.P_min = cfg.threshold.p_min_w;
        topt.P_max = cfg.threshold.p_max_w;
        const ThresholdResult th = threshold(cfg.params, topt);
        const double P = cfg.dsp.p_over_pth * th.P_th;
        const ClassicalState comb = capture_comb(cfg.params, P, th.k_star);
        const NoiseSpectrum S = output_spectrum(cfg.params, comb, 2.0 * M_PI * cfg.dsp.omega_hz);
        const Eigen::Matrix4d T = photocurrent_cross_spectrum(cfg.params, comb, S);
        // normalize each channel by its output amplitude: unit DC levels and
        // unit calibration slope, which keeps float32 traces well-scaled
        Eigen::Vector4d amp;
        const int modes[4] = {1, -1, 2, -2};
        for (int i = 0; i < 4; ++i)
            amp[i] = std::abs(output_amplitude(cfg.params, comb, modes[i]));
        Eigen::Matrix4d R;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) R(i, j) = T(i, j) / (amp[i] * amp[j]);
        target = R.cast<Complex>();
        spec.dc_levels = {1.0, 1.0, 1.0, 1.0};
        if (predicted_varc_db) {
            const VarianceDecomposition d =
                variance_decomposition(cfg.params, comb, S, std::min(cfg.params.M, 2));
            *predicted_varc_db = 10.0 * std::log10(d.var_c_snu);
        }
    }

    dsp::TraceSet traces = dsp::synthesize_traces(target, spec);
    if (cfg.dsp.lowpass_hz > 0.0) traces = dsp::lowpass(traces, cfg.dsp.lowpass_hz).traces;
    return traces;
}

int cmd_dsp_synth(const CommonFlags& flags, const std::string& out_file) {
    const RunConfig cfg = load_with_overrides(flags);
    fs::create_directories(cfg.output_dir);
    double predicted = 0.0;
    const dsp::TraceSet traces = synthesize_from_config(cfg, &predicted);
    const std::string path =
        out_file.empty() ? cfg.output_dir + "/traces.kct" : out_file;
    dsp::save_traces(path, traces);
    print_kv("config_hash", hash_string(cfg.config_hash));
    print_kv("traces_file", path);
    print_kv("synth_mode", cfg.dsp.synth_mode);
    print_kv("predicted_varc_db", predicted);
    return 0;
}

int cmd_dsp_calibrate(const CommonFlags& flags) {
    const RunConfig cfg = load_with_overrides(flags);
    fs::create_directories(cfg.output_dir);
    const auto& d = cfg.dsp;
    std::vector<dsp::TraceSet> runs;
    for (std::size_t i = 0; i < d.calibration_levels.size(); ++i) {
        const double level = d.calibration_levels[i];
        dsp::SynthesisSpec spec;
        spec.acq = d.acq;
        spec.acq.n_segments = d.calibration_n_segments;
        spec.seed = d.seed + 1000 + i;
        Eigen::Matrix4cd target = Eigen::Matrix4cd::Zero();
        for (int c = 0; c < 4; ++c) {
            spec.dc_levels[c] = level * (d.synth_mode == "injected" ? d.dc_levels[c] : 1.0);
            target(c, c) = spec.dc_levels[c];  // unit slope shot noise
        }
        dsp::TraceSet t = dsp::synthesize_traces(target, spec);
        if (d.lowpass_hz > 0.0) t = dsp::lowpass(t, d.lowpass_hz).traces;
        runs.push_back(std::move(t));
    }
    const std::string window = d.window;
    const auto calib = dsp::shot_noise_calibration(
        runs, d.omega_hz, d.calibration_band_halfwidth,
        window == "hann" ? dsp::Window::Hann : dsp::Window::Rectangular);
    const std::string path = cfg.output_dir + "/calibration.csv";
    {
        std::ofstream f(path);
        f << "detector,slope,residual_rms_rel\n" << std::setprecision(12);
        for (int c = 0; c < 4; ++c)
            f << dsp::kChannelLabels[c] << "," << calib[c].slope << ","
              << calib[c].residual_rms_rel << "\n";
    }
    print_kv("config_hash", hash_string(cfg.config_hash));
    print_kv("calibration_file", path);
    for (int c = 0; c < 4; ++c)
        print_kv(std::string("slope_") + dsp::kChannelLabels[c], calib[c].slope);
    return 0;
}

std::array<std::optional<dsp::CalibrationCurve>, 4> load_calibration(const std::string& path) {
    std::array<std::optional<dsp::CalibrationCurve>, 4> out;
    std::ifstream f(path);
    if (!f) return out;  // all missing; reported per detector downstream
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string label, slope, res;
        std::getline(ss, label, ',');
        std::getline(ss, slope, ',');
        std::getline(ss, res, ',');
        for (int c = 0; c < 4; ++c) {
            if (label == dsp::kChannelLabels[c]) {
                dsp::CalibrationCurve curve;
                curve.slope = std::stod(slope);
                curve.residual_rms_rel = res.empty() ? 0.0 : std::stod(res);
                out[c] = curve;
            }
        }
    }
    return out;
}

int cmd_dsp_process(const CommonFlags& flags, const std::string& traces_path,
                    const std::string& calibration_path, bool csv_format) {
    RunConfig cfg = load_with_overrides(flags);
    fs::create_directories(cfg.output_dir);
    const auto& d = cfg.dsp;

    const std::string tpath = traces_path.empty() ? d.traces_file : traces_path;
    if (tpath.empty()) throw ConfigError("dsp.traces_file: no input traces configured");
    const bool as_csv = csv_format || d.traces_format == "csv";
    const dsp::TraceSet traces =
        as_csv ? dsp::load_traces_csv(tpath, d.acq) : dsp::load_traces(tpath);

    const std::string cpath =
        calibration_path.empty() ? d.calibration_file : calibration_path;
    if (cpath.empty())
        throw DomainError("missing calibration for detector I+1 (no calibration file)");
    const auto calib = load_calibration(cpath);

    dsp::BandSpec band;
    band.center_hz = d.omega_hz;
    band.retain_halfwidth = std::max(64, d.band_halfwidth);
    const dsp::Window window =
        d.window == "hann" ? dsp::Window::Hann : dsp::Window::Rectangular;
    const dsp::SpectralEstimate est = dsp::segment_spectra(traces, band, window);

    const dsp::AlphaFit a1 = dsp::fit_alpha(est, 1, d.band_halfwidth);
    const dsp::AlphaFit a2 = dsp::fit_alpha(est, 2, d.band_halfwidth);
    const dsp::BetaFit beta = dsp::fit_beta(est, a1, a2, 2.0, d.band_halfwidth);
    const dsp::CombinedVariance cv =
        dsp::combined_variance(est, a1, a2, beta, {1.0, 2.0}, d.band_halfwidth);

    const NoiseReport r1 =
        dsp::normalize_pair_to_snl(cv.var_d1, calib, est.dc_levels, 1, a1.alpha);
    const NoiseReport r2 =
        dsp::normalize_pair_to_snl(cv.var_d2, calib, est.dc_levels, 2, a2.alpha);
    const NoiseReport rc = dsp::normalize_combined_to_snl(cv.var_c, calib, est.dc_levels,
                                                          a1.alpha, a2.alpha, beta.beta);

    print_kv("config_hash", hash_string(cfg.config_hash));
    print_kv("n_segments", double(est.n_segments));
    print_kv("parseval_residual_max", est.max_parseval_residual);
    print_kv("alpha1_mag", std::abs(a1.alpha));
    print_kv("alpha1_arg_rad", std::arg(a1.alpha));
    print_kv("alpha1_weak_coherence", a1.weak_coherence ? 1.0 : 0.0);
    print_kv("alpha2_mag", std::abs(a2.alpha));
    print_kv("alpha2_arg_rad", std::arg(a2.alpha));
    print_kv("alpha2_weak_coherence", a2.weak_coherence ? 1.0 : 0.0);
    print_kv("beta_arg_rad", std::arg(beta.beta));
    print_kv("beta_degenerate", beta.degenerate ? 1.0 : 0.0);
    auto report = [&](const char* name, const NoiseReport& r, double var, double err) {
        print_kv(std::string(name) + "_db", r.dB);
        print_kv(std::string(name) + "_db_err", 10.0 / std::log(10.0) * err / var);
        print_kv(std::string(name) + "_snu", r.variance_snu);
    };
    report("var_d1", r1, cv.var_d1, cv.stderr_d1);
    report("var_d2", r2, cv.var_d2, cv.stderr_d2);
    report("var_c", rc, cv.var_c, cv.stderr_c);

    const std::string spec_path = cfg.output_dir + "/variance_spectrum.csv";
    {
        std::ofstream f(spec_path);
        f << "freq_hz,var_Ip1,var_Im1,var_Ip2,var_Im2\n" << std::setprecision(10);
        for (int m = 0; m < est.avg_variance[0].size(); ++m) {
            f << m * est.bin_hz;
            for (int c = 0; c < 4; ++c) f << "," << est.avg_variance[c][m];
            f << "\n";
        }
    }
    print_kv("variance_spectrum_csv", spec_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kerr-comb quantum noise toolkit: classical steady states, linearized "
                 "noise spectra, a Fock-space invariant checker, and the photocurrent "
                 "analysis pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string out_file, traces_path, calibration_path;
    bool csv_format = false;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        if (needs_config)
            sub->add_option("config", flags.config_path, "JSON configuration file")
                ->required()
                ->check(CLI::ExistingFile);
        sub->add_option("--out-dir", flags.out_dir, "output directory override");
        sub->add_option("--omega-hz", flags.omega_hz, "analysis frequency override, Hz");
        sub->add_option("--seed", flags.seed, "RNG seed override");
    };

    CLI::App* th = app.add_subcommand("threshold", "oscillation threshold of the configured device");
    add_common(th);

    CLI::App* sw = app.add_subcommand("sweep", "pump-power sweep with branch and noise CSVs");
    add_common(sw);
    sw->add_option("--threads", flags.threads, "worker pool size for noise evaluation");

    CLI::App* orc = app.add_subcommand("oracle", "Fock-space invariant suite (key=value report)");
    add_common(orc);

    CLI::App* dsp_cmd = app.add_subcommand("dsp", "photocurrent pipeline");
    dsp_cmd->require_subcommand(1);
    CLI::App* synth = dsp_cmd->add_subcommand("synth", "synthesize traces from the configured target");
    add_common(synth);
    synth->add_option("--out", out_file, "output trace file (default <out-dir>/traces.kct)");
    CLI::App* cal = dsp_cmd->add_subcommand("calibrate", "shot-noise calibration runs and fit");
    add_common(cal);
    CLI::App* proc = dsp_cmd->add_subcommand("process", "full pipeline on recorded traces");
    add_common(proc);
    proc->add_option("--traces", traces_path, "trace file (overrides config)");
    proc->add_option("--calibration", calibration_path, "calibration CSV (overrides config)");
    proc->add_flag("--csv", csv_format, "treat the trace file as 4-column CSV");

    CLI::App* pc = app.add_subcommand("print-config", "write the documented default config to stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (th->parsed()) return cmd_threshold(flags);
        if (sw->parsed()) return cmd_sweep(flags);
        if (orc->parsed()) return cmd_oracle(flags);
        if (dsp_cmd->parsed()) {
            if (synth->parsed()) return cmd_dsp_synth(flags, out_file);
            if (cal->parsed()) return cmd_dsp_calibrate(flags);
            if (proc->parsed()) return cmd_dsp_process(flags, traces_path, calibration_path, csv_format);
        }
        if (pc->parsed()) {
            std::cout << default_config_json().dump(2) << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "domain condition: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
