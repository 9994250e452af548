#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "kerrcomb/errors.hpp"
#include "kerrcomb/noise_report.hpp"

// Photocurrent pipeline: synthetic traces with prescribed cross-spectra,
// segmented FFT noise estimation, the alpha/beta balancing fits, shot-noise
// calibration and SNL-normalized reports.
//
// Conventions used throughout:
//  - DFT X[m] = sum_n x[n] exp(-2 pi i n m / N) (forward unscaled).
//  - "variance per bin" of a channel at bin m is |X[m]|^2 / N, so a white
//    signal of variance s^2 has a flat per-bin variance s^2 and the band
//    average of the per-bin variance reproduces the time-domain variance.
//  - A delay of d samples on a channel multiplies bin m by
//    exp(-2 pi i m d / N), i.e. x(t) -> x(t - d/fs).
namespace kerrcomb::dsp {

using Complex = std::complex<double>;

inline constexpr std::array<const char*, 4> kChannelLabels = {"I+1", "I-1", "I+2", "I-2"};

struct AcquisitionParams {
    double sample_rate = 5e9;             // Hz
    std::size_t segment_length = 500000;  // samples (100 us at 5 GS/s)
    int n_segments = 50;
};

struct TraceSet {
    std::array<std::vector<float>, 4> channels;  // (+1, -1, +2, -2)
    AcquisitionParams acq;
    std::array<double, 4> dc_levels{};  // nominal DC per channel
};

inline void validate_traces(const TraceSet& t) {
    const std::size_t expect = t.acq.segment_length * static_cast<std::size_t>(t.acq.n_segments);
    for (const auto& ch : t.channels)
        if (ch.size() != expect)
            throw ConfigError("traces: channel length must equal segment_length * n_segments");
    if (t.acq.n_segments < 1) throw ConfigError("traces: need at least one segment");
    if (!(t.acq.sample_rate > 0.0)) throw ConfigError("traces: sample rate must be positive");
}

// ---------------------------------------------------------------------------
// synthesis

struct SynthesisSpec {
    AcquisitionParams acq;
    std::array<double, 4> dc_levels{1.0, 1.0, 1.0, 1.0};
    std::array<double, 4> delay_samples{0.0, 0.0, 0.0, 0.0};
    std::uint64_t seed = 1;
};

namespace detail {

inline Eigen::Matrix4cd hermitian_sqrt(const Eigen::Matrix4cd& S) {
    const Eigen::Matrix4cd H = 0.5 * (S + S.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> eig(H);
    const double scale = std::max(1e-300, eig.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::Vector4d lam = eig.eigenvalues();
    for (int i = 0; i < 4; ++i) {
        if (lam[i] < -1e-9 * scale)
            throw NumericalError("synthesize_traces: target cross-spectrum is not PSD");
        lam[i] = std::max(lam[i], 0.0);
    }
    return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
           eig.eigenvectors().adjoint();
}

}  // namespace detail

// Stationary Gaussian channels whose estimated cross-spectral matrix
// converges to target(f) (in variance-per-bin units) as segments accumulate.
// Deterministic for a fixed seed; per-channel delays are applied as exact
// frequency-domain phase ramps.
inline TraceSet synthesize_traces(const std::function<Eigen::Matrix4cd(double)>& target,
                                  const SynthesisSpec& spec) {
    const std::size_t N = spec.acq.segment_length;
    if (N < 16) throw ConfigError("synthesize_traces: segment too short");
    const double fs = spec.acq.sample_rate;
    const std::size_t half = N / 2;

    std::vector<Eigen::Matrix4cd> L(half + 1);
    for (std::size_t m = 1; m <= half; ++m)
        L[m] = detail::hermitian_sqrt(target(double(m) * fs / double(N)));

    TraceSet out;
    out.acq = spec.acq;
    out.dc_levels = spec.dc_levels;
    for (auto& ch : out.channels) ch.reserve(N * spec.acq.n_segments);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const double sqrtN = std::sqrt(double(N));

    std::array<std::vector<Complex>, 4> X;
    for (auto& x : X) x.assign(N, Complex(0.0, 0.0));
    Eigen::FFT<double> fft;
    std::vector<double> time(N);

    for (int seg = 0; seg < spec.acq.n_segments; ++seg) {
        for (std::size_t m = 1; m <= half; ++m) {
            Eigen::Vector4cd xi;
            if (2 * m == N) {
                for (int c = 0; c < 4; ++c) xi[c] = Complex(gauss(rng), 0.0);
            } else {
                for (int c = 0; c < 4; ++c)
                    xi[c] = Complex(gauss(rng), gauss(rng)) * inv_sqrt2;
            }
            const Eigen::Vector4cd v = L[m] * xi;
            for (int c = 0; c < 4; ++c) {
                const double phase = -2.0 * M_PI * double(m) * spec.delay_samples[c] / double(N);
                Complex val = sqrtN * v[c] * std::exp(Complex(0.0, phase));
                if (2 * m == N) val = Complex(val.real(), 0.0);  // Nyquist bin is real
                X[c][m] = val;
                if (2 * m != N) X[c][N - m] = std::conj(val);
            }
        }
        for (int c = 0; c < 4; ++c) {
            fft.inv(time, X[c]);
            for (std::size_t n = 0; n < N; ++n)
                out.channels[c].push_back(static_cast<float>(time[n] + spec.dc_levels[c]));
        }
    }
    return out;
}

inline TraceSet synthesize_traces(const Eigen::Matrix4cd& flat_target, const SynthesisSpec& spec) {
    return synthesize_traces([&](double) { return flat_target; }, spec);
}

// ---------------------------------------------------------------------------
// FIR low-pass

struct FirFilter {
    std::vector<double> taps;
    double group_delay_samples = 0.0;
    double cutoff_hz = 0.0;
    double sample_rate = 0.0;

    // magnitude response at one frequency (direct evaluation of the taps)
    double magnitude_at(double f_hz) const {
        Complex h(0.0, 0.0);
        for (std::size_t n = 0; n < taps.size(); ++n)
            h += taps[n] * std::exp(Complex(0.0, -2.0 * M_PI * f_hz * double(n) / sample_rate));
        return std::abs(h);
    }
};

// Kaiser-window linear-phase FIR: flat (<= 0.1 dB) below 0.8 * cutoff and
// >= 40 dB rejection above 1.5 * cutoff, designed for ~60 dB stopband.
inline FirFilter design_lowpass_fir(double sample_rate, double cutoff_hz,
                                    double stopband_db = 60.0) {
    if (!(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * sample_rate)
        throw ConfigError("lowpass: cutoff must lie below the Nyquist frequency");
    const double f_pass = 0.8 * cutoff_hz;
    const double f_stop = std::min(1.5 * cutoff_hz, 0.499 * sample_rate);
    const double d_omega = 2.0 * M_PI * (f_stop - f_pass) / sample_rate;
    const double A = stopband_db;
    const double beta = A > 50.0 ? 0.1102 * (A - 8.7)
                                 : 0.5842 * std::pow(A - 21.0, 0.4) + 0.07886 * (A - 21.0);
    int taps = static_cast<int>(std::ceil((A - 7.95) / (2.285 * d_omega))) + 1;
    if (taps % 2 == 0) ++taps;

    FirFilter fir;
    fir.taps.resize(taps);
    fir.cutoff_hz = cutoff_hz;
    fir.sample_rate = sample_rate;
    fir.group_delay_samples = 0.5 * (taps - 1);
    const double wc = M_PI * (f_pass + f_stop) / sample_rate;  // ideal edge mid-transition
    const int mid = (taps - 1) / 2;
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    for (int n = 0; n < taps; ++n) {
        const int k = n - mid;
        const double ideal = k == 0 ? wc / M_PI : std::sin(wc * k) / (M_PI * k);
        const double r = double(k) / double(mid);
        const double window = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) /
                              i0_beta;
        fir.taps[n] = ideal * window;
    }
    return fir;
}

// Linear convolution by FFT overlap-add, with the group delay compensated so
// the output stays aligned with the input. Edge transients span half the
// filter length at each end.
inline std::vector<float> apply_fir(const std::vector<float>& x, const FirFilter& fir) {
    const std::size_t taps = fir.taps.size();
    std::size_t block = 1;
    while (block < 8 * taps) block <<= 1;
    std::size_t nfft = 1;
    while (nfft < block + taps - 1) nfft <<= 1;

    Eigen::FFT<double> fft;
    std::vector<double> h(nfft, 0.0);
    std::copy(fir.taps.begin(), fir.taps.end(), h.begin());
    std::vector<Complex> H;
    fft.fwd(H, h);

    std::vector<double> acc(x.size() + taps - 1, 0.0);
    std::vector<double> buf(nfft, 0.0);
    std::vector<Complex> spec;
    for (std::size_t start = 0; start < x.size(); start += block) {
        const std::size_t len = std::min(block, x.size() - start);
        std::fill(buf.begin(), buf.end(), 0.0);
        for (std::size_t i = 0; i < len; ++i) buf[i] = x[start + i];
        fft.fwd(spec, buf);
        for (std::size_t i = 0; i < nfft; ++i) spec[i] *= H[i];
        fft.inv(buf, spec);
        const std::size_t keep = std::min(len + taps - 1, acc.size() - start);
        for (std::size_t i = 0; i < keep; ++i) acc[start + i] += buf[i];
    }

    const std::size_t delay = (taps - 1) / 2;
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(acc[i + delay]);
    return out;
}

struct LowpassResult {
    TraceSet traces;
    FirFilter filter;
};

inline LowpassResult lowpass(const TraceSet& in, double cutoff_hz) {
    validate_traces(in);
    LowpassResult out{in, design_lowpass_fir(in.acq.sample_rate, cutoff_hz)};
    for (int c = 0; c < 4; ++c) out.traces.channels[c] = apply_fir(in.channels[c], out.filter);
    return out;
}

// ---------------------------------------------------------------------------
// segmented spectra

enum class Window { Rectangular, Hann };

struct BandSpec {
    double center_hz = 4e6;
    int retain_halfwidth = 64;  // complex bins kept around the center
};

struct SpectralEstimate {
    double sample_rate = 0.0;
    std::size_t segment_length = 0;
    int n_segments = 0;
    Window window = Window::Rectangular;
    double bin_hz = 0.0;
    int center_bin = 0;
    int band_begin = 0;  // first retained bin index

    // retained per-segment spectra, rows = bins in band, cols = segments,
    // scaled so |value|^2 is variance-per-bin
    std::array<Eigen::MatrixXcd, 4> band;
    // segment-averaged variance and its standard error on the full half grid
    std::array<Eigen::VectorXd, 4> avg_variance;
    std::array<Eigen::VectorXd, 4> stderr_variance;
    std::array<double, 4> dc_levels{};  // measured time-domain means
    double max_parseval_residual = 0.0;

    int bin_of(double f_hz) const {
        return static_cast<int>(std::lround(f_hz * double(segment_length) / sample_rate));
    }
    int band_row(int bin) const { return bin - band_begin; }
};

// Disjoint (non-overlapping) segment FFTs, rectangular window by default,
// averaged per bin with the standard error over segments.
inline SpectralEstimate segment_spectra(const TraceSet& traces, BandSpec bspec,
                                        Window window = Window::Rectangular) {
    validate_traces(traces);
    const std::size_t N = traces.acq.segment_length;
    if (N < 16) throw ConfigError("segment_spectra: segment shorter than 16 samples");
    const int nseg = traces.acq.n_segments;

    SpectralEstimate est;
    est.sample_rate = traces.acq.sample_rate;
    est.segment_length = N;
    est.n_segments = nseg;
    est.window = window;
    est.bin_hz = traces.acq.sample_rate / double(N);
    est.center_bin = est.bin_of(bspec.center_hz);
    const int half = static_cast<int>(N / 2);
    if (est.center_bin < 1 || est.center_bin > half)
        throw ConfigError("segment_spectra: analysis frequency outside the resolved band");
    est.band_begin = std::max(1, est.center_bin - bspec.retain_halfwidth);
    const int band_end = std::min(half, est.center_bin + bspec.retain_halfwidth);
    const int nband = band_end - est.band_begin + 1;

    std::vector<double> win(N, 1.0);
    if (window == Window::Hann) {
        for (std::size_t n = 0; n < N; ++n)
            win[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(n) / double(N));
        double p = 0.0;
        for (double w : win) p += w * w;
        const double norm = std::sqrt(double(N) / p);  // keep variance calibration
        for (double& w : win) w *= norm;
    }

    for (int c = 0; c < 4; ++c) {
        est.band[c].resize(nband, nseg);
        est.avg_variance[c] = Eigen::VectorXd::Zero(half + 1);
        est.stderr_variance[c] = Eigen::VectorXd::Zero(half + 1);
    }
    std::array<Eigen::MatrixXd, 4> per_segment_var;
    for (auto& m : per_segment_var) m.resize(half + 1, nseg);

    Eigen::FFT<double> fft;
    std::vector<double> buf(N);
    std::vector<Complex> spec;
    const double inv_sqrtN = 1.0 / std::sqrt(double(N));

    for (int c = 0; c < 4; ++c) {
        double dc_acc = 0.0;
        for (int s = 0; s < nseg; ++s) {
            const float* src = traces.channels[c].data() + std::size_t(s) * N;
            double mean_sq = 0.0, mean = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                mean += src[n];
                buf[n] = double(src[n]) * win[n];
                mean_sq += buf[n] * buf[n];
            }
            mean /= double(N);
            mean_sq /= double(N);
            dc_acc += mean;
            fft.fwd(spec, buf);

            double band_power = 0.0;
            for (int m = 0; m <= half; ++m) {
                const double v = std::norm(spec[m]) / double(N);
                per_segment_var[c](m, s) = v;
                band_power += v * ((m == 0 || 2 * m == int(N)) ? 1.0 : 2.0);
            }
            // Parseval: sum_m |X_m|^2 / N^2 == mean square of the segment
            const double residual =
                std::abs(band_power / double(N) - mean_sq) / std::max(mean_sq, 1e-300);
            est.max_parseval_residual = std::max(est.max_parseval_residual, residual);

            for (int m = est.band_begin; m <= band_end; ++m)
                est.band[c](m - est.band_begin, s) = spec[m] * inv_sqrtN;
        }
        est.dc_levels[c] = dc_acc / double(nseg);
        est.avg_variance[c] = per_segment_var[c].rowwise().mean();
        if (nseg > 1) {
            for (int m = 0; m <= half; ++m) {
                const double mu = est.avg_variance[c][m];
                double ss = 0.0;
                for (int s = 0; s < nseg; ++s) {
                    const double d = per_segment_var[c](m, s) - mu;
                    ss += d * d;
                }
                est.stderr_variance[c][m] = std::sqrt(ss / double(nseg - 1)) / std::sqrt(double(nseg));
            }
        }
    }
    return est;
}

// ---------------------------------------------------------------------------
// balancing fits

namespace detail {

// rows of the retained band used for an analysis at center_bin +/- hw
struct BandRows {
    int begin, count;
};

inline BandRows analysis_rows(const SpectralEstimate& est, int halfwidth) {
    const int lo = std::max(est.band_begin, est.center_bin - halfwidth);
    const int hi = std::min(est.band_begin + int(est.band[0].rows()) - 1,
                            est.center_bin + halfwidth);
    if (hi < lo) throw ConfigError("analysis band not retained in the spectral estimate");
    return {est.band_row(lo), hi - lo + 1};
}

inline double golden_minimize(const std::function<double(double)>& f, double lo, double hi,
                              double tol) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace detail

struct AlphaFit {
    Complex alpha{1.0, 0.0};
    double min_combined_power = 0.0;  // achieved segment-averaged |Delta|^2
    double coherence = 0.0;
    bool weak_coherence = false;
};

// Balancing parameter for the pair (+k, -k): |alpha| is pinned to the ratio
// of the measured DC levels; the phase minimizes the segment-averaged
// |I_k - alpha I_-k|^2 at the analysis bin (global grid search on [-pi, pi),
// golden-section refined to 1e-4 rad). A joint magnitude fit is available
// behind a flag for sensitivity studies.
inline AlphaFit fit_alpha(const SpectralEstimate& est, int pair_k, int band_halfwidth = 3,
                          bool fit_magnitude = false) {
    if (pair_k != 1 && pair_k != 2) throw ConfigError("fit_alpha: pair must be 1 or 2");
    const int cp = pair_k == 1 ? 0 : 2;
    const int cm = cp + 1;
    if (!(est.dc_levels[cp] > 0.0) || !(est.dc_levels[cm] > 0.0))
        throw DomainError("fit_alpha: zero DC level on detector " +
                          std::string(kChannelLabels[est.dc_levels[cp] > 0.0 ? cm : cp]));

    const auto rows = detail::analysis_rows(est, band_halfwidth);
    const auto Ip = est.band[cp].middleRows(rows.begin, rows.count);
    const auto Im = est.band[cm].middleRows(rows.begin, rows.count);

    const double pp = Ip.squaredNorm(), pm = Im.squaredNorm();
    const Complex cross = (Ip.array().conjugate() * Im.array()).sum();
    const double denom = std::sqrt(pp * pm);
    const double coherence = denom > 0.0 ? std::abs(cross) / denom : 0.0;
    const double count = double(rows.count) * double(est.n_segments);
    // contract threshold 0.01, raised to the finite-sample significance
    // floor: for incoherent data count*c^2 is ~exponential with unit mean
    const double weak2 = std::max(1e-4, 9.0 / count);

    AlphaFit fit;
    fit.coherence = coherence;
    const double mag = est.dc_levels[cp] / est.dc_levels[cm];
    if (coherence * coherence < weak2) {
        fit.weak_coherence = true;
        fit.alpha = Complex(mag, 0.0);
        fit.min_combined_power = (pp + mag * mag * pm) / count;
        return fit;
    }

    auto power_at = [&](double phase) {
        const Complex a = std::polar(mag, phase);
        return (Ip - a * Im).squaredNorm() / count;
    };
    double best_phase = 0.0, best = power_at(0.0);
    const int grid = 720;
    for (int i = 1; i < grid; ++i) {
        const double ph = -M_PI + 2.0 * M_PI * double(i) / grid;
        const double v = power_at(ph);
        if (v < best) {
            best = v;
            best_phase = ph;
        }
    }
    const double span = 2.0 * M_PI / grid;
    best_phase = detail::golden_minimize(power_at, best_phase - span, best_phase + span, 1e-5);
    fit.alpha = std::polar(mag, best_phase);
    fit.min_combined_power = power_at(best_phase);

    if (fit_magnitude) {
        // full complex least squares: alpha = <I_-k^* I_k> / <|I_-k|^2>
        const Complex a = (Im.array().conjugate() * Ip.array()).sum() / pm;
        fit.alpha = a;
        fit.min_combined_power = (Ip - a * Im).squaredNorm() / count;
    }
    return fit;
}

struct BetaFit {
    Complex beta{1.0, 0.0};
    double combined_power = 0.0;
    double coherence = 0.0;
    bool degenerate = false;  // Delta_2 empty or incoherent; beta left at 1
};

// Inter-pair balancing: beta has unit modulus by default (pure delay
// compensation) and its phase minimizes Var(Delta_1 + w2 beta Delta_2).
inline BetaFit fit_beta(const SpectralEstimate& est, const AlphaFit& alpha1,
                        const AlphaFit& alpha2, double weight2 = 2.0, int band_halfwidth = 3,
                        bool unit_modulus = true) {
    const auto rows = detail::analysis_rows(est, band_halfwidth);
    const Eigen::MatrixXcd D1 = est.band[0].middleRows(rows.begin, rows.count) -
                                alpha1.alpha * est.band[1].middleRows(rows.begin, rows.count);
    const Eigen::MatrixXcd D2 = est.band[2].middleRows(rows.begin, rows.count) -
                                alpha2.alpha * est.band[3].middleRows(rows.begin, rows.count);
    const double count = double(rows.count) * double(est.n_segments);
    const double p1 = D1.squaredNorm(), p2 = D2.squaredNorm();

    BetaFit fit;
    if (p2 <= 1e-9 * std::max(p1, 1e-300)) {
        fit.degenerate = true;
        fit.combined_power = p1 / count;
        return fit;
    }
    const Complex cross = (D1.array().conjugate() * D2.array()).sum();
    fit.coherence = std::abs(cross) / std::sqrt(p1 * p2);
    if (fit.coherence * fit.coherence < std::max(1e-4, 9.0 / count)) {
        fit.degenerate = true;
        fit.combined_power = (p1 + weight2 * weight2 * p2) / count;
        return fit;
    }

    if (unit_modulus) {
        auto power_at = [&](double phase) {
            return (D1 + weight2 * std::polar(1.0, phase) * D2).squaredNorm() / count;
        };
        double best_phase = 0.0, best = power_at(0.0);
        const int grid = 720;
        for (int i = 1; i < grid; ++i) {
            const double ph = -M_PI + 2.0 * M_PI * double(i) / grid;
            const double v = power_at(ph);
            if (v < best) {
                best = v;
                best_phase = ph;
            }
        }
        const double span = 2.0 * M_PI / grid;
        best_phase = detail::golden_minimize(power_at, best_phase - span, best_phase + span, 1e-5);
        fit.beta = std::polar(1.0, best_phase);
        fit.combined_power = power_at(best_phase);
    } else {
        const Complex b = -cross / (weight2 * p2);
        fit.beta = std::conj(b);  // minimizes |D1 + w2 beta D2|^2
        fit.combined_power = (D1 + weight2 * fit.beta * D2).squaredNorm() / count;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// combined observables

struct CombinedVariance {
    double var_c = 0.0, stderr_c = 0.0;
    double var_d1 = 0.0, stderr_d1 = 0.0;
    double var_d2 = 0.0, stderr_d2 = 0.0;
};

// Per-segment band-averaged variance of C = w1 Delta_1 + w2 beta Delta_2 and
// of the two pair differences, with standard errors over segments.
inline CombinedVariance combined_variance(const SpectralEstimate& est, const AlphaFit& alpha1,
                                          const AlphaFit& alpha2, const BetaFit& beta,
                                          std::array<double, 2> weights = {1.0, 2.0},
                                          int band_halfwidth = 3) {
    const auto rows = detail::analysis_rows(est, band_halfwidth);
    const Eigen::MatrixXcd D1 = est.band[0].middleRows(rows.begin, rows.count) -
                                alpha1.alpha * est.band[1].middleRows(rows.begin, rows.count);
    const Eigen::MatrixXcd D2 = est.band[2].middleRows(rows.begin, rows.count) -
                                alpha2.alpha * est.band[3].middleRows(rows.begin, rows.count);
    const Eigen::MatrixXcd C = weights[0] * D1 + (weights[1] * beta.beta) * D2;

    auto stats = [&](const Eigen::MatrixXcd& M, double& var, double& err) {
        const Eigen::VectorXd per_seg = M.cwiseAbs2().colwise().mean();
        var = per_seg.mean();
        if (est.n_segments > 1) {
            const double ss = (per_seg.array() - var).square().sum() / double(est.n_segments - 1);
            err = std::sqrt(ss / double(est.n_segments));
        }
    };
    CombinedVariance out;
    stats(C, out.var_c, out.stderr_c);
    stats(D1, out.var_d1, out.stderr_d1);
    stats(D2, out.var_d2, out.stderr_d2);
    return out;
}

// ---------------------------------------------------------------------------
// shot-noise calibration

struct CalibrationCurve {
    double slope = 0.0;  // variance-per-bin per unit DC level
    double residual_rms_rel = 0.0;
    std::vector<std::pair<double, double>> points;  // (dc, variance)

    double snl_at(double dc) const { return slope * dc; }
};

// Least-squares line through the origin of (DC level -> variance at the
// analysis bin); rejects non-monotone or poorly linear data, which signal
// classical-noise contamination of the calibration source.
inline CalibrationCurve fit_calibration_curve(std::vector<std::pair<double, double>> points) {
    if (points.size() < 4) throw ConfigError("calibration: need >= 4 levels");
    std::sort(points.begin(), points.end());
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].first <= points[i - 1].first)
            throw ConfigError("calibration: power levels must be strictly increasing");
        if (points[i].second <= points[i - 1].second)
            throw NumericalError("calibration rejected: non-monotone variance vs power");
    }
    double num = 0.0, den = 0.0, vmean = 0.0;
    for (const auto& [dc, var] : points) {
        num += dc * var;
        den += dc * dc;
        vmean += var;
    }
    vmean /= double(points.size());
    CalibrationCurve curve;
    curve.slope = num / den;
    double ss = 0.0;
    for (const auto& [dc, var] : points) {
        const double r = var - curve.slope * dc;
        ss += r * r;
    }
    curve.residual_rms_rel = std::sqrt(ss / double(points.size())) / vmean;
    curve.points = std::move(points);
    if (curve.residual_rms_rel > 0.05)
        throw NumericalError("calibration rejected: relative residual RMS " +
                             std::to_string(curve.residual_rms_rel) + " exceeds 5%");
    if (!(curve.slope > 0.0)) throw NumericalError("calibration rejected: non-positive slope");
    return curve;
}

// Calibrate all four detectors from coherent-beam runs at several powers,
// acquired and processed exactly like the signal runs.
inline std::array<CalibrationCurve, 4> shot_noise_calibration(const std::vector<TraceSet>& runs,
                                                              double center_hz,
                                                              int band_halfwidth = 3,
                                                              Window window = Window::Rectangular) {
    if (runs.size() < 4) throw ConfigError("calibration: need >= 4 levels");
    std::array<std::vector<std::pair<double, double>>, 4> pts;
    for (const auto& run : runs) {
        BandSpec b;
        b.center_hz = center_hz;
        b.retain_halfwidth = band_halfwidth;
        const SpectralEstimate est = segment_spectra(run, b, window);
        const auto rows = detail::analysis_rows(est, band_halfwidth);
        for (int c = 0; c < 4; ++c) {
            const double var =
                est.band[c].middleRows(rows.begin, rows.count).cwiseAbs2().mean();
            pts[c].push_back({est.dc_levels[c], var});
        }
    }
    std::array<CalibrationCurve, 4> out;
    for (int c = 0; c < 4; ++c) {
        try {
            out[c] = fit_calibration_curve(pts[c]);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(kChannelLabels[c]) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SNL normalization

// Composite shot-noise level of Delta_k = I_k - alpha_k I_-k for coherent
// beams at the measured DC levels: SNL_k + |alpha_k|^2 SNL_-k (the |alpha|^2
// factor is what the pipeline itself would measure on coherent inputs).
inline double snl_of_pair(const std::array<std::optional<CalibrationCurve>, 4>& calib,
                          const std::array<double, 4>& dc, int pair_k, const Complex& alpha) {
    const int cp = pair_k == 1 ? 0 : 2;
    const int cm = cp + 1;
    for (int c : {cp, cm})
        if (!calib[c])
            throw DomainError("missing calibration for detector " +
                              std::string(kChannelLabels[c]));
    return calib[cp]->snl_at(dc[cp]) + std::norm(alpha) * calib[cm]->snl_at(dc[cm]);
}

inline NoiseReport normalize_pair_to_snl(double variance,
                                         const std::array<std::optional<CalibrationCurve>, 4>& calib,
                                         const std::array<double, 4>& dc, int pair_k,
                                         const Complex& alpha) {
    const double snl = snl_of_pair(calib, dc, pair_k, alpha);
    return make_noise_report("var(Delta_" + std::to_string(pair_k) + ")", variance, snl,
                             "SNL_k + |alpha|^2 SNL_-k from per-detector calibration");
}

inline NoiseReport normalize_combined_to_snl(
    double variance, const std::array<std::optional<CalibrationCurve>, 4>& calib,
    const std::array<double, 4>& dc, const Complex& alpha1, const Complex& alpha2,
    const Complex& beta, std::array<double, 2> weights = {1.0, 2.0}) {
    const double snl = weights[0] * weights[0] * snl_of_pair(calib, dc, 1, alpha1) +
                       weights[1] * weights[1] * std::norm(beta) *
                           snl_of_pair(calib, dc, 2, alpha2);
    return make_noise_report("var(C)", variance, snl,
                             "sum of weights^2 pair SNLs from per-detector calibration");
}

// ---------------------------------------------------------------------------
// trace container format: text header + little-endian float32 per channel

inline void save_traces(const std::string& path, const TraceSet& t) {
    validate_traces(t);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("save_traces: cannot open " + path);
    f << "KERRCOMB-TRACES 1\n";
    f << "channels=I+1,I-1,I+2,I-2\n";
    f << "sample_rate_hz=" << std::setprecision(17) << t.acq.sample_rate << "\n";
    f << "segment_length=" << t.acq.segment_length << "\n";
    f << "n_segments=" << t.acq.n_segments << "\n";
    f << "dc_levels=" << t.dc_levels[0] << "," << t.dc_levels[1] << "," << t.dc_levels[2] << ","
      << t.dc_levels[3] << "\n";
    f << "data=float32le\n\n";
    for (const auto& ch : t.channels)
        f.write(reinterpret_cast<const char*>(ch.data()),
                static_cast<std::streamsize>(ch.size() * sizeof(float)));
}

inline TraceSet load_traces(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("load_traces: cannot open " + path);
    std::string line;
    std::getline(f, line);
    if (line != "KERRCOMB-TRACES 1")
        throw ConfigError("load_traces: not a KERRCOMB-TRACES file: " + path);
    TraceSet t;
    while (std::getline(f, line) && !line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "sample_rate_hz") t.acq.sample_rate = std::stod(val);
        else if (key == "segment_length") t.acq.segment_length = std::stoul(val);
        else if (key == "n_segments") t.acq.n_segments = std::stoi(val);
        else if (key == "dc_levels") {
            std::stringstream ss(val);
            std::string tok;
            for (int c = 0; c < 4 && std::getline(ss, tok, ','); ++c)
                t.dc_levels[c] = std::stod(tok);
        }
    }
    const std::size_t n = t.acq.segment_length * static_cast<std::size_t>(t.acq.n_segments);
    for (auto& ch : t.channels) {
        ch.resize(n);
        f.read(reinterpret_cast<char*>(ch.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!f) throw ConfigError("load_traces: truncated data in " + path);
    }
    validate_traces(t);
    return t;
}

// CSV import: four numeric columns (I+1, I-1, I+2, I-2), optional header row.
// Acquisition metadata comes from the caller; DC levels are measured.
inline TraceSet load_traces_csv(const std::string& path, const AcquisitionParams& acq) {
    std::ifstream f(path);
    if (!f) throw ConfigError("load_traces_csv: cannot open " + path);
    TraceSet t;
    t.acq = acq;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::array<double, 4> row{};
        int c = 0;
        bool ok = true;
        while (c < 4 && std::getline(ss, tok, ',')) {
            try {
                row[c] = std::stod(tok);
            } catch (...) {
                ok = false;
                break;
            }
            ++c;
        }
        if (!ok || c < 4) {
            if (first) {
                first = false;  // header row
                continue;
            }
            throw ConfigError("load_traces_csv: malformed row: " + line);
        }
        first = false;
        for (int i = 0; i < 4; ++i) t.channels[i].push_back(static_cast<float>(row[i]));
    }
    const std::size_t expect = acq.segment_length * static_cast<std::size_t>(acq.n_segments);
    for (auto& ch : t.channels)
        if (ch.size() != expect)
            throw ConfigError("load_traces_csv: row count " + std::to_string(ch.size()) +
                              " does not match segment_length * n_segments");
    for (int c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (float v : t.channels[c]) acc += v;
        t.dc_levels[c] = acc / double(t.channels[c].size());
    }
    return t;
}

}  // namespace kerrcomb::dsp
