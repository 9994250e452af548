#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kerrcomb/drift.hpp"

namespace kerrcomb {

namespace detail {

// Real roots of x^3 + a x^2 + b x + c, polished by Newton. Returns 1-3 roots.
inline std::vector<double> cubic_real_roots(double a, double b, double c) {
    const double p = b - a * a / 3.0;
    const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    std::vector<double> roots;
    const double disc = -4.0 * p * p * p - 27.0 * q * q;
    if (disc > 0.0) {
        // three distinct real roots (trigonometric form)
        const double m = 2.0 * std::sqrt(-p / 3.0);
        const double theta = std::acos(std::clamp(3.0 * q / (p * m), -1.0, 1.0)) / 3.0;
        for (int k = 0; k < 3; ++k)
            roots.push_back(m * std::cos(theta - 2.0 * M_PI * k / 3.0) - a / 3.0);
    } else {
        double t;
        if (p == 0.0) {
            t = std::cbrt(-q);
        } else {
            const double s = std::sqrt(q * q / 4.0 + p * p * p / 27.0);
            const double u = std::cbrt(-q / 2.0 + s);
            const double v = std::cbrt(-q / 2.0 - s);
            t = u + v;
        }
        roots.push_back(t - a / 3.0);
    }
    for (double& x : roots) {
        for (int it = 0; it < 4; ++it) {
            const double f = ((x + a) * x + b) * x + c;
            const double fp = (3.0 * x + 2.0 * a) * x + b;
            if (fp == 0.0) break;
            x -= f / fp;
        }
    }
    std::sort(roots.begin(), roots.end());
    // dedupe near-coincident roots from the trig branch at the discriminant edge
    std::vector<double> out;
    for (double x : roots) {
        if (!out.empty() && std::abs(x - out.back()) <= 1e-9 * std::max(1.0, std::abs(x)))
            continue;
        out.push_back(x);
    }
    return out;
}

inline bool is_pump_only(const ClassicalState& s, double rel = 1e-8) {
    const double a0 = std::abs(s.a(0));
    double side = 0.0;
    for (int k = -s.M(); k <= s.M(); ++k)
        if (k != 0) side = std::max(side, std::abs(s.a(k)));
    return side <= rel * std::max(1.0, a0);
}

// Rotate by the U(theta) gauge so the brightest sideband is real positive;
// needed to compare states from different sweep directions. The reference
// mode prefers +k so that symmetric combs (|A_k| = |A_-k| up to noise) always
// canonicalize the same way.
inline ClassicalState canonical_gauge(const ClassicalState& s) {
    int kb = 0;
    double best = 0.0;
    for (int k = 1; k <= s.M(); ++k) {
        const double m = std::max(std::abs(s.a(k)), std::abs(s.a(-k)));
        if (m > best * (1.0 + 1e-6)) {
            best = m;
            kb = std::abs(s.a(-k)) > (1.0 + 1e-6) * std::abs(s.a(k)) ? -k : k;
        }
    }
    if (kb == 0 || best == 0.0) return s;
    const double theta = -std::arg(s.a(kb)) / double(kb);
    ClassicalState out = s;
    for (int k = -s.M(); k <= s.M(); ++k)
        out.a(k) = s.a(k) * std::exp(Complex(0.0, theta * k));
    return out;
}

inline double state_distance(const ClassicalState& a, const ClassicalState& b) {
    const ClassicalState ca = canonical_gauge(a), cb = canonical_gauge(b);
    const double scale = std::max({1.0, ca.amps.cwiseAbs().maxCoeff(), cb.amps.cwiseAbs().maxCoeff()});
    return (ca.amps - cb.amps).cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

// All real-positive intensities x = |A_0|^2 of the pump-only steady state,
//   x [ (kappa/2)^2 + (delta0 - g x)^2 ] = kappa_ext,0 * P / (hbar omega0),
// each lifted to a ClassicalState (sidebands zero, pump phase from the
// linear response). Sorted by intensity; P = 0 gives the single zero state.
inline std::vector<ClassicalState> pump_only_roots(const SystemParams& params, double P) {
    if (P < 0.0) throw ConfigError("pump_only_roots: P must be non-negative");
    const double kappa = params.kappa_total_at(0);
    const double delta0 = params.detuning_at(0);
    const double g = params.g;
    const double F = params.kappa_ext_at(0) * params.pump_photon_flux_at(P);

    std::vector<double> xs;
    if (P == 0.0) {
        xs = {0.0};
    } else if (g == 0.0) {
        xs = {F / (0.25 * kappa * kappa + delta0 * delta0)};
    } else {
        // g^2 x^3 - 2 g delta0 x^2 + ((kappa/2)^2 + delta0^2) x - F = 0
        const double a = -2.0 * delta0 / g;
        const double b = (0.25 * kappa * kappa + delta0 * delta0) / (g * g);
        const double c = -F / (g * g);
        for (double x : detail::cubic_real_roots(a, b, c))
            if (x > 0.0 && std::isfinite(x)) xs.push_back(x);
    }

    std::vector<ClassicalState> out;
    for (double x : xs) {
        ClassicalState s(params.M);
        const double phi = -std::atan2(delta0 - g * x, 0.5 * kappa);
        s.a(0) = std::sqrt(std::max(x, 0.0)) * std::exp(Complex(0.0, phi));
        s.pump_power_at_solution = P;
        out.push_back(std::move(s));
    }
    return out;
}

struct ThresholdResult {
    double P_th = 0.0;        // W
    int k_star = 0;           // destabilizing sideband pair
    double pump_intensity = 0.0;  // |A_0|^2 at threshold
};

struct ThresholdOptions {
    double P_min = 1e-6;      // W
    double P_max = 1.0;       // W
    double rel_tol = 1e-6;
    int scan_points = 64;
};

namespace detail {

// Largest sideband-pair growth rate of the pump-only solution at power P,
// from the pair blocks of the full drift matrix (exact block structure there).
struct PairGrowth {
    double max_re;
    int k;
};

inline PairGrowth pump_only_pair_growth(const SystemParams& params, const ClassicalState& s) {
    const int M = params.M;
    const Eigen::MatrixXd A = drift_matrix(params, s);
    PairGrowth best{-std::numeric_limits<double>::infinity(), 0};
    for (int k = 1; k <= M; ++k) {
        Eigen::Matrix4d B;
        const int idx[4] = {x_index(k, M), p_index(k, M), x_index(-k, M), p_index(-k, M)};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) B(i, j) = A(idx[i], idx[j]);
        const auto ev = B.eigenvalues();
        const double re = ev.real().maxCoeff();
        if (re > best.max_re) best = {re, k};
    }
    return best;
}

inline ClassicalState up_branch_root(const SystemParams& params, double P) {
    auto roots = pump_only_roots(params, P);
    return roots.front();  // smallest intensity = branch continued from P=0
}

}  // namespace detail

// Smallest pump power at which the pump-only solution (lower branch) becomes
// linearly unstable toward a sideband pair +/-k; bisection to rel_tol.
inline ThresholdResult threshold(const SystemParams& params, ThresholdOptions opt = {}) {
    if (!(opt.P_min > 0.0) || !(opt.P_max > opt.P_min))
        throw ConfigError("threshold: need 0 < P_min < P_max");
    if (params.g <= 0.0) throw DomainError("no threshold in range (g = 0)");
    auto growth = [&](double P) {
        return detail::pump_only_pair_growth(params, detail::up_branch_root(params, P));
    };
    double lo = opt.P_min, hi = -1.0;
    if (growth(lo).max_re > 0.0) {
        hi = lo;
        lo = opt.P_min * 1e-9;
        if (growth(lo).max_re > 0.0) throw DomainError("no threshold in range (unstable at P_min)");
    } else {
        const double ratio = std::pow(opt.P_max / opt.P_min, 1.0 / (opt.scan_points - 1));
        double P = opt.P_min;
        for (int i = 1; i < opt.scan_points; ++i) {
            const double Pn = P * ratio;
            if (growth(Pn).max_re > 0.0) {
                lo = P;
                hi = Pn;
                break;
            }
            P = Pn;
        }
        if (hi < 0.0) throw DomainError("no threshold in range (stable up to P_max)");
    }
    while ((hi - lo) / hi > opt.rel_tol) {
        const double mid = 0.5 * (lo + hi);
        (growth(mid).max_re > 0.0 ? hi : lo) = mid;
    }
    ThresholdResult res;
    res.P_th = hi;
    const auto g = growth(hi);
    res.k_star = g.k;
    res.pump_intensity = std::norm(detail::up_branch_root(params, hi).a(0));
    return res;
}

struct SolveOptions {
    int max_iterations = 200;
    int max_halvings = 8;
    double tol = 1e-10;  // on ||F||_inf relative to max(1, ||A||_inf)
};

namespace detail {

inline Eigen::VectorXd real_residual(const SystemParams& params, const ClassicalState& s,
                                     double P) {
    const Eigen::VectorXcd F = coupled_mode_rhs(params, s, P);
    const int n = params.n_modes();
    Eigen::VectorXd R(2 * n);
    for (int i = 0; i < n; ++i) {
        R[2 * i] = F[i].real();
        R[2 * i + 1] = F[i].imag();
    }
    return R;
}

// d(Re F, Im F)/d(Re A, Im A); same block mapping as the quadrature drift.
inline Eigen::MatrixXd real_jacobian(const SystemParams& params, const ClassicalState& s) {
    return drift_matrix(params, s);
}

}  // namespace detail

namespace detail {

// The Newton convergence test ||F||_inf <= tol * max(1, ||A||_inf) only means
// something in natural units (rates ~ 1, amplitudes ~ 1). SI-scale problems
// are mapped onto that frame with the exact rescaling the model admits:
// time by 1/kappa_ref and amplitude by a_ref, under which
//   kappa -> kappa/kappa_ref, delta -> delta/kappa_ref,
//   g -> g a_ref^2 / kappa_ref, photon flux -> flux/(kappa_ref a_ref^2).
struct ScaledProblem {
    SystemParams params;
    double P_scaled = 0.0;
    double amp_scale = 1.0;
};

inline ScaledProblem nondimensionalize(const SystemParams& params, double P,
                                       const ClassicalState& guess) {
    const double kappa_ref = params.kappa_max();
    const double flux = params.pump_photon_flux_at(P);
    double a = std::max(guess.amps.cwiseAbs().maxCoeff(),
                        std::sqrt(params.kappa_ext_at(0)) * std::sqrt(flux) / kappa_ref);
    if (!(a > 0.0)) a = 1.0;

    ScaledProblem sp;
    sp.amp_scale = a;
    sp.params = params;
    for (int i = 0; i < params.n_modes(); ++i) {
        sp.params.kappa_total[i] = params.kappa_total[i] / kappa_ref;
        sp.params.kappa_ext[i] = params.kappa_ext[i] / kappa_ref;
        sp.params.detuning[i] = params.detuning[i] / kappa_ref;
    }
    sp.params.g = params.g * a * a / kappa_ref;
    // choose the scaled pump power so its photon flux is flux/(kappa_ref a^2)
    sp.P_scaled = P / (kappa_ref * a * a);
    return sp;
}

}  // namespace detail

// Newton iteration on F(A, conj A) = 0 over the real/imaginary split system,
// with line-search damping and the comb phase gauge fixed by Im A_{k_g} = 0
// on the brightest sideband (appended as an extra least-squares row; the
// pump-only problem needs no gauge and is unaffected by it). Internally the
// problem is solved in nondimensional units; see ScaledProblem.
inline ClassicalState solve_comb(const SystemParams& params_in, double P_in,
                                 const ClassicalState& guess_in, SolveOptions opt = {}) {
    validate_state(params_in, guess_in);
    const detail::ScaledProblem sp = detail::nondimensionalize(params_in, P_in, guess_in);
    const SystemParams& params = sp.params;
    const double P = sp.P_scaled;
    ClassicalState guess = guess_in;
    guess.amps /= sp.amp_scale;

    const int M = params.M;
    const int n = params.n_modes();

    auto pick_gauge = [&](const ClassicalState& s) -> int {
        int kg = 0;
        double best = 0.0;
        for (int k = -M; k <= M; ++k) {
            if (k == 0) continue;
            if (std::abs(s.a(k)) > best) {
                best = std::abs(s.a(k));
                kg = k;
            }
        }
        return kg;  // 0 means "no bright sideband in guess"
    };

    auto run = [&](int k_gauge) -> ClassicalState {
        ClassicalState s = guess;
        s.pump_power_at_solution = P;
        Eigen::VectorXd R = detail::real_residual(params, s, P);
        for (int it = 0; it < opt.max_iterations; ++it) {
            const double scale = std::max(1.0, s.amps.cwiseAbs().maxCoeff());
            if (R.cwiseAbs().maxCoeff() <= opt.tol * scale &&
                (k_gauge == 0 || std::abs(s.a(k_gauge).imag()) <= opt.tol * scale))
                return s;

            const Eigen::MatrixXd J = detail::real_jacobian(params, s);
            Eigen::MatrixXd Jb;
            Eigen::VectorXd rb;
            if (k_gauge != 0) {
                Jb.setZero(2 * n + 1, 2 * n);
                Jb.topRows(2 * n) = J;
                Jb(2 * n, 2 * (k_gauge + M) + 1) = 1.0;
                rb.resize(2 * n + 1);
                rb.head(2 * n) = -R;
                rb[2 * n] = -s.a(k_gauge).imag();
            } else {
                Jb = J;
                rb = -R;
            }
            const Eigen::VectorXd step = Jb.colPivHouseholderQr().solve(rb);

            // damped update: halve until the residual norm decreases
            const double r0 = R.norm();
            double t = 1.0;
            bool improved = false;
            ClassicalState trial = s;
            for (int h = 0; h <= opt.max_halvings; ++h) {
                trial = s;
                for (int i = 0; i < n; ++i)
                    trial.amps[i] += t * Complex(step[2 * i], step[2 * i + 1]);
                const Eigen::VectorXd Rt = detail::real_residual(params, trial, P);
                if (Rt.norm() < (1.0 - 1e-4 * t) * r0 || Rt.norm() < opt.tol) {
                    s = trial;
                    R = Rt;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if (!improved) throw NumericalError("no convergence (line search stalled)");
        }
        throw NumericalError("no convergence (iteration limit)");
    };

    int kg = pick_gauge(guess);
    ClassicalState sol = run(kg);
    if (!detail::is_pump_only(sol)) {
        // gauge row must sit on a bright mode of the solution
        const double bright = std::abs(sol.a(kg == 0 ? 1 : kg));
        double best = 0.0;
        int kb = 0;
        for (int k = -M; k <= M; ++k)
            if (k != 0 && std::abs(sol.a(k)) > best) {
                best = std::abs(sol.a(k));
                kb = k;
            }
        if (kg == 0 || bright < 1e-8 * best) {
            if (kb == kg) throw NumericalError("converged to unstable gauge");
            sol = run(kb);
            if (std::abs(sol.a(kb)) < 1e-8 * sol.amps.cwiseAbs().maxCoeff())
                throw NumericalError("converged to unstable gauge");
        }
    }
    sol.amps *= sp.amp_scale;
    sol.pump_power_at_solution = P_in;
    return sol;
}

// Scaled residual of the coupled-mode equations at a state: the quantity the
// solver drives below SolveOptions::tol, exposed so callers can re-verify
// convergence in the same nondimensional frame.
inline double solver_residual(const SystemParams& params, const ClassicalState& state, double P) {
    const detail::ScaledProblem sp = detail::nondimensionalize(params, P, state);
    ClassicalState scaled = state;
    scaled.amps /= sp.amp_scale;
    const Eigen::VectorXcd F = coupled_mode_rhs(sp.params, scaled, sp.P_scaled);
    return F.cwiseAbs().maxCoeff() / std::max(1.0, scaled.amps.cwiseAbs().maxCoeff());
}

// Pump-only continuation root plus a deterministic symmetric perturbation of
// relative size eps on modes +/-k_star; the standard seed for comb branches.
inline ClassicalState seeded_guess(const SystemParams& params, double P, int k_star,
                                   double eps = 1e-3) {
    ClassicalState s = detail::up_branch_root(params, P);
    const double mag = eps * std::max(std::abs(s.a(0)), 1.0);
    s.a(k_star) += mag;
    s.a(-k_star) += mag;
    return s;
}

// Newton's basin around the (still valid, but unstable) pump-only solution
// swallows small seeds, so the comb is captured with a deterministic
// escalation of the symmetric seed amplitude. Returns the first converged
// state with bright sidebands; falls back to the pump-only solution if the
// whole ladder converges back to it.
inline ClassicalState capture_comb(const SystemParams& params, double P, int k_star,
                                   SolveOptions opt = {}) {
    ClassicalState last = detail::up_branch_root(params, P);
    for (double eps : {1e-3, 1e-2, 0.05, 0.1, 0.3, 0.6, 1.0}) {
        try {
            ClassicalState s = solve_comb(params, P, seeded_guess(params, P, k_star, eps), opt);
            if (!detail::is_pump_only(s)) return s;
            last = s;
        } catch (const NumericalError&) {
            // try the next seed amplitude
        }
    }
    return last;
}

inline StabilitySpectrum stability_eigenvalues(const SystemParams& params,
                                               const ClassicalState& state) {
    return compute_stability(params, state);
}

struct BranchPoint {
    double P;
    ClassicalState state;
    bool stable;
};

struct Branch {
    std::string label;
    std::vector<BranchPoint> points;
};

struct SweepOptions {
    std::optional<int> k_star;  // seed mode; computed from threshold() if absent
    SolveOptions solve;
};

// Natural-parameter continuation over P_list (ascending), run in both
// directions. When the continued solution is an unstable pump-only state the
// comb branch is re-seeded deterministically. Solver failures truncate the
// branch. Distinct up/down states at the same P (bistability) keep both
// branches in the output; otherwise the up-sweep alone is returned.
inline std::vector<Branch> sweep_pump(const SystemParams& params,
                                      const std::vector<double>& P_list,
                                      SweepOptions opt = {}) {
    if (P_list.empty()) throw ConfigError("sweep_pump: empty power list");
    if (!std::is_sorted(P_list.begin(), P_list.end()))
        throw ConfigError("sweep_pump: P_list must be sorted ascending");

    int k_star = opt.k_star.value_or(0);
    if (k_star == 0) {
        try {
            ThresholdOptions topt;
            topt.P_min = P_list.front() * 1e-3;
            topt.P_max = P_list.back();
            k_star = threshold(params, topt).k_star;
        } catch (const DomainError&) {
            k_star = 1;
        }
    }

    auto run_direction = [&](bool up) -> Branch {
        Branch br;
        br.label = up ? "up" : "down";
        std::vector<double> order = P_list;
        if (!up) std::reverse(order.begin(), order.end());
        std::optional<ClassicalState> prev;
        for (double P : order) {
            ClassicalState guess = prev ? *prev : [&] {
                auto roots = pump_only_roots(params, P);
                return up ? roots.front() : roots.back();
            }();
            ClassicalState state;
            try {
                state = solve_comb(params, P, guess, opt.solve);
                StabilitySpectrum st = compute_stability(params, state);
                if (detail::is_pump_only(state) && !st.stable) {
                    // try to land on the comb branch, seeding the pair that is
                    // actually unstable at this power
                    const int k_local = detail::pump_only_pair_growth(params, state).k;
                    const ClassicalState comb =
                        capture_comb(params, P, k_local > 0 ? k_local : k_star, opt.solve);
                    if (!detail::is_pump_only(comb)) {
                        state = comb;
                        st = compute_stability(params, state);
                    }
                }
                br.points.push_back({P, state, st.stable});
                prev = state;
            } catch (const NumericalError&) {
                break;  // branch truncation, not global failure
            }
        }
        if (!up) std::reverse(br.points.begin(), br.points.end());
        return br;
    };

    Branch upb = run_direction(true);
    Branch dnb = run_direction(false);

    bool distinct = upb.points.size() != dnb.points.size();
    if (!distinct) {
        for (std::size_t i = 0; i < upb.points.size(); ++i) {
            if (upb.points[i].P != dnb.points[i].P ||
                detail::state_distance(upb.points[i].state, dnb.points[i].state) > 1e-6) {
                distinct = true;
                break;
            }
        }
    }
    std::vector<Branch> out;
    out.push_back(std::move(upb));
    if (distinct) out.push_back(std::move(dnb));
    return out;
}

}  // namespace kerrcomb
