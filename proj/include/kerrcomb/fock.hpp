#pragma once

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include "kerrcomb/coupling.hpp"
#include "kerrcomb/errors.hpp"

namespace kerrcomb::fock {

using Complex = std::complex<double>;
using SparseMatrix = Eigen::SparseMatrix<Complex>;
using FockState = Eigen::VectorXcd;

// Truncated multimode Fock space with a per-mode photon-number cutoff.
// Per-mode cutoffs keep the diagonal invariant C = sum k n_k exactly
// compatible with the truncation projector, so [C, P H P] = 0 holds
// identically rather than approximately.
struct FockSpace {
    int M = 1;
    std::vector<int> cutoff;       // max occupation per mode, slot i -> mode i-M
    std::vector<std::size_t> stride;
    std::size_t dim = 0;

    FockSpace() = default;
    FockSpace(int M_, std::vector<int> cutoffs, std::size_t max_dim = 2000000)
        : M(M_), cutoff(std::move(cutoffs)) {
        if (M < 1) throw ConfigError("FockSpace: M >= 1 required");
        if (cutoff.size() != static_cast<std::size_t>(2 * M + 1))
            throw ConfigError("FockSpace: expected 2M+1 cutoffs");
        for (int c : cutoff)
            if (c < 0) throw ConfigError("FockSpace: cutoffs must be non-negative");
        stride.resize(cutoff.size());
        std::size_t d = 1;
        for (std::size_t m = 0; m < cutoff.size(); ++m) {
            stride[m] = d;
            const std::size_t radix = static_cast<std::size_t>(cutoff[m]) + 1;
            if (d > max_dim / radix + 1) throw DomainError("dimension overflow");
            d *= radix;
        }
        if (d > max_dim) throw DomainError("dimension overflow");
        dim = d;
    }

    FockSpace(int M_, int flat_cutoff, std::size_t max_dim = 2000000)
        : FockSpace(M_, std::vector<int>(2 * M_ + 1, flat_cutoff), max_dim) {}

    int n_modes() const { return 2 * M + 1; }
    int mode_slot(int k) const { return k + M; }

    int occupation(std::size_t index, int slot) const {
        return static_cast<int>((index / stride[slot]) %
                                (static_cast<std::size_t>(cutoff[slot]) + 1));
    }

    void occupations(std::size_t index, std::vector<int>& occ) const {
        occ.resize(cutoff.size());
        for (std::size_t m = 0; m < cutoff.size(); ++m) occ[m] = occupation(index, m);
    }

    std::size_t index_of(const std::vector<int>& occ) const {
        std::size_t idx = 0;
        for (std::size_t m = 0; m < cutoff.size(); ++m)
            idx += static_cast<std::size_t>(occ[m]) * stride[m];
        return idx;
    }
};

struct FockOperator {
    FockSpace space;
    SparseMatrix mat;
};

inline double hermiticity_residual(const FockOperator& op) {
    const SparseMatrix diff = SparseMatrix(op.mat - SparseMatrix(op.mat.adjoint()));
    double m = 0.0;
    for (int c = 0; c < diff.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(diff, c); it; ++it)
            m = std::max(m, std::abs(it.value()));
    return m;
}

// H = g sum over energy-conserving quadruples of adag_r adag_s a_p a_q, with
// ladder-rule matrix elements and truncation by projection (transitions past
// any per-mode cutoff are dropped). Optionally adds diagonal detuning terms
// sum_k Delta_k n_k, which commute with C and so preserve the invariant.
inline FockOperator build_fwm_hamiltonian(const FockSpace& space, double g,
                                          const std::vector<double>& detuning = {}) {
    if (!detuning.empty() && detuning.size() != static_cast<std::size_t>(space.n_modes()))
        throw ConfigError("build_fwm_hamiltonian: detuning needs 2M+1 entries");
    const auto quads = energy_conserving_quadruples(space.M);
    std::vector<Eigen::Triplet<Complex>> trip;
    std::vector<int> occ;
    for (std::size_t j = 0; j < space.dim; ++j) {
        for (const auto& t : quads) {
            space.occupations(j, occ);
            const int sq = space.mode_slot(t.q), sp = space.mode_slot(t.p);
            const int ss = space.mode_slot(t.s), sr = space.mode_slot(t.r);
            if (occ[sq] < 1) continue;
            double c = std::sqrt(double(occ[sq]));
            --occ[sq];
            if (occ[sp] < 1) continue;
            c *= std::sqrt(double(occ[sp]));
            --occ[sp];
            if (occ[ss] + 1 > space.cutoff[ss]) continue;
            c *= std::sqrt(double(occ[ss] + 1));
            ++occ[ss];
            if (occ[sr] + 1 > space.cutoff[sr]) continue;
            c *= std::sqrt(double(occ[sr] + 1));
            ++occ[sr];
            if (g * c != 0.0)
                trip.emplace_back(static_cast<int>(space.index_of(occ)), static_cast<int>(j),
                                  Complex(g * c, 0.0));
        }
        if (!detuning.empty()) {
            space.occupations(j, occ);
            double d = 0.0;
            for (int m = 0; m < space.n_modes(); ++m) d += detuning[m] * occ[m];
            if (d != 0.0)
                trip.emplace_back(static_cast<int>(j), static_cast<int>(j), Complex(d, 0.0));
        }
    }
    FockOperator op{space, SparseMatrix(space.dim, space.dim)};
    op.mat.setFromTriplets(trip.begin(), trip.end());
    return op;
}

// Diagonal operator sum_k w_k n_k; w_k = k gives the invariant C.
inline FockOperator build_weighted_number(const FockSpace& space,
                                          const std::vector<double>& weights) {
    if (weights.size() != static_cast<std::size_t>(space.n_modes()))
        throw ConfigError("build_weighted_number: weights need 2M+1 entries");
    std::vector<Eigen::Triplet<Complex>> trip;
    for (std::size_t i = 0; i < space.dim; ++i) {
        double v = 0.0;
        for (int m = 0; m < space.n_modes(); ++m) v += weights[m] * space.occupation(i, m);
        if (v != 0.0) trip.emplace_back(static_cast<int>(i), static_cast<int>(i), Complex(v, 0.0));
    }
    FockOperator op{space, SparseMatrix(space.dim, space.dim)};
    op.mat.setFromTriplets(trip.begin(), trip.end());
    return op;
}

inline std::vector<double> charlie_weights(int M) {
    std::vector<double> w(2 * M + 1);
    for (int k = -M; k <= M; ++k) w[k + M] = double(k);
    return w;
}

inline FockOperator build_charlie(const FockSpace& space) {
    return build_weighted_number(space, charlie_weights(space.M));
}

inline FockOperator number_operator(const FockSpace& space, int k) {
    std::vector<double> w(space.n_modes(), 0.0);
    w[space.mode_slot(k)] = 1.0;
    return build_weighted_number(space, w);
}

// max-entry magnitude of X Y - Y X
inline double commutator_norm(const FockOperator& X, const FockOperator& Y) {
    if (X.space.dim != Y.space.dim)
        throw ConfigError("commutator_norm: operators live on different spaces");
    const SparseMatrix C = SparseMatrix(X.mat * Y.mat - Y.mat * X.mat);
    double m = 0.0;
    for (int c = 0; c < C.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(C, c); it; ++it)
            m = std::max(m, std::abs(it.value()));
    return m;
}

// U(theta) = prod_k exp(i theta k n_k): diagonal phase exp(i theta C_n).
inline FockOperator phase_shift_unitary(const FockSpace& space, double theta) {
    std::vector<Eigen::Triplet<Complex>> trip;
    for (std::size_t i = 0; i < space.dim; ++i) {
        double cval = 0.0;
        for (int m = 0; m < space.n_modes(); ++m)
            cval += double(m - space.M) * space.occupation(i, m);
        trip.emplace_back(static_cast<int>(i), static_cast<int>(i),
                          std::exp(Complex(0.0, theta * cval)));
    }
    FockOperator op{space, SparseMatrix(space.dim, space.dim)};
    op.mat.setFromTriplets(trip.begin(), trip.end());
    return op;
}

// Normalized product of per-mode truncated coherent states.
inline FockState coherent_state(const FockSpace& space, const std::vector<Complex>& alphas) {
    if (alphas.size() != static_cast<std::size_t>(space.n_modes()))
        throw ConfigError("coherent_state: need 2M+1 alphas");
    std::vector<std::vector<Complex>> coeff(space.n_modes());
    for (int m = 0; m < space.n_modes(); ++m) {
        coeff[m].resize(space.cutoff[m] + 1);
        Complex c(1.0, 0.0);
        coeff[m][0] = c;
        for (int n = 1; n <= space.cutoff[m]; ++n) {
            c *= alphas[m] / std::sqrt(double(n));
            coeff[m][n] = c;
        }
    }
    FockState psi(space.dim);
    for (std::size_t i = 0; i < space.dim; ++i) {
        Complex v(1.0, 0.0);
        for (int m = 0; m < space.n_modes(); ++m) v *= coeff[m][space.occupation(i, m)];
        psi[i] = v;
    }
    psi.normalize();
    return psi;
}

inline FockState random_state(const FockSpace& space, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    FockState psi(space.dim);
    for (std::size_t i = 0; i < space.dim; ++i) psi[i] = Complex(gauss(rng), gauss(rng));
    psi.normalize();
    return psi;
}

// Largest summed population on any max-occupation layer; the truncation-
// artifact monitor. Modes frozen at cutoff 0 are skipped (they cannot leak).
inline double boundary_leakage(const FockSpace& space, const FockState& psi) {
    std::vector<double> layer(space.n_modes(), 0.0);
    for (std::size_t i = 0; i < space.dim; ++i) {
        const double w = std::norm(psi[i]);
        if (w == 0.0) continue;
        for (int m = 0; m < space.n_modes(); ++m)
            if (space.cutoff[m] > 0 && space.occupation(i, m) == space.cutoff[m])
                layer[m] += w;
    }
    double mx = 0.0;
    for (double v : layer) mx = std::max(mx, v);
    return mx;
}

struct EvolveOptions {
    double tol = 1e-12;       // local error budget per unit time (relative)
    int krylov_dim = 60;
    int max_steps = 100000;
};

// psi(t) = exp(-i H t) psi0 by Lanczos (Krylov) stepping with full
// reorthogonalization and a standard last-component error estimate.
inline FockState evolve(const FockSpace& space, const FockOperator& H, const FockState& psi0,
                        double t, EvolveOptions opt = {}) {
    if (H.space.dim != space.dim || psi0.size() != static_cast<Eigen::Index>(space.dim))
        throw ConfigError("evolve: dimension mismatch");
    if (t == 0.0) return psi0;

    FockState psi = psi0;
    double remaining = std::abs(t);
    const double sign = t >= 0.0 ? 1.0 : -1.0;
    double dt = remaining;
    int steps = 0;
    while (remaining > 0.0) {
        if (++steps > opt.max_steps)
            throw NumericalError("evolve: step limit reached without convergence");
        const double beta0 = psi.norm();
        const int m_max = std::min<int>(opt.krylov_dim, static_cast<int>(space.dim));
        Eigen::MatrixXcd V(space.dim, m_max);
        Eigen::VectorXd alpha(m_max), beta(m_max);
        V.col(0) = psi / beta0;
        int m = 0;
        double next_beta = 0.0;
        for (int j = 0; j < m_max; ++j) {
            Eigen::VectorXcd w = H.mat * V.col(j);
            alpha[j] = std::real(V.col(j).dot(w));
            w -= alpha[j] * V.col(j);
            if (j > 0) w -= beta[j - 1] * V.col(j - 1);
            // full reorthogonalization for numerical safety
            for (int r = 0; r <= j; ++r) w -= V.col(r).dot(w) * V.col(r);
            next_beta = w.norm();
            m = j + 1;
            if (next_beta < 1e-14 || j == m_max - 1) break;
            beta[j] = next_beta;
            V.col(j + 1) = w / next_beta;
        }

        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
        for (int j = 0; j < m; ++j) {
            T(j, j) = alpha[j];
            if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta[j];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(T);

        double step_dt = std::min(dt, remaining);
        for (;;) {
            const Eigen::VectorXcd phases =
                ((eig.eigenvalues().array() * (-sign * step_dt)).cast<double>())
                    .unaryExpr([](double x) { return std::exp(Complex(0.0, x)); })
                    .matrix();
            const Eigen::VectorXcd w =
                eig.eigenvectors().cast<Complex>() *
                phases.cwiseProduct(eig.eigenvectors().row(0).transpose().cast<Complex>());
            const double err = (m < static_cast<int>(space.dim) && next_beta > 1e-14)
                                   ? next_beta * std::abs(w[m - 1]) * step_dt
                                   : 0.0;
            if (err <= opt.tol * std::max(step_dt / std::abs(t), 1e-3) || step_dt <= 1e-300) {
                psi = beta0 * (V.leftCols(m) * w);
                remaining -= step_dt;
                dt = std::min(remaining, step_dt * 1.5);
                break;
            }
            step_dt *= 0.5;
        }
    }
    return psi;
}

inline double expectation(const FockOperator& X, const FockState& psi) {
    const Complex v = psi.dot(X.mat * psi);
    return v.real();
}

inline double variance(const FockOperator& X, const FockState& psi) {
    const Eigen::VectorXcd Xpsi = X.mat * psi;
    const double m1 = std::real(psi.dot(Xpsi));
    const double m2 = std::real(Xpsi.dot(Xpsi));  // <X^2> for Hermitian X
    return m2 - m1 * m1;
}

// Exact means and covariances of the number operators n_k, |k| <= M_meas,
// in one pass over the basis (all operators involved are diagonal).
struct NumberMoments {
    int M_meas = 0;
    Eigen::VectorXd mean;   // index k + M_meas
    Eigen::MatrixXd cov;    // <n_k n_l> - <n_k><n_l>
};

inline NumberMoments number_moments(const FockSpace& space, const FockState& psi, int M_meas) {
    if (M_meas < 0 || M_meas > space.M)
        throw ConfigError("number_moments: M_meas must lie in [0, M]");
    const int n = 2 * M_meas + 1;
    NumberMoments mm;
    mm.M_meas = M_meas;
    mm.mean = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd occ(n);
    for (std::size_t i = 0; i < space.dim; ++i) {
        const double w = std::norm(psi[i]);
        if (w == 0.0) continue;
        for (int k = -M_meas; k <= M_meas; ++k)
            occ[k + M_meas] = space.occupation(i, space.mode_slot(k));
        mm.mean += w * occ;
        second += w * occ * occ.transpose();
    }
    mm.cov = second - mm.mean * mm.mean.transpose();
    return mm;
}

// Var(C), Var_BP, Cov_MP (pair-exclusion convention k != +/-l) from exact
// moments; Var(C) is computed independently from the diagonal spectrum of C
// so the identity residual is a real check, not a tautology.
struct FockDecomposition {
    double var_c = 0.0;
    double var_bp = 0.0;
    double cov_mp = 0.0;
    double identity_residual = 0.0;
};

inline FockDecomposition decomposition_check(const FockSpace& space, const FockState& psi,
                                             int M_meas) {
    const NumberMoments mm = number_moments(space, psi, M_meas);
    FockDecomposition d;
    double c1 = 0.0, c2 = 0.0;
    for (std::size_t i = 0; i < space.dim; ++i) {
        const double w = std::norm(psi[i]);
        if (w == 0.0) continue;
        double cval = 0.0;
        for (int k = -M_meas; k <= M_meas; ++k)
            cval += double(k) * space.occupation(i, space.mode_slot(k));
        c1 += w * cval;
        c2 += w * cval * cval;
    }
    d.var_c = c2 - c1 * c1;
    for (int k = 1; k <= M_meas; ++k) {
        const int ik = k + M_meas, imk = -k + M_meas;
        d.var_bp += double(k) * double(k) *
                    (mm.cov(ik, ik) + mm.cov(imk, imk) - 2.0 * mm.cov(ik, imk));
    }
    for (int k = -M_meas; k <= M_meas; ++k)
        for (int l = -M_meas; l <= M_meas; ++l) {
            if (k == l || k == -l) continue;
            d.cov_mp += double(k) * double(l) * mm.cov(k + M_meas, l + M_meas);
        }
    d.identity_residual = std::abs(d.var_c - d.var_bp - d.cov_mp);
    return d;
}

}  // namespace kerrcomb::fock
