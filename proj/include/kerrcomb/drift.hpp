#pragma once

#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "kerrcomb/coupling.hpp"

namespace kerrcomb {

// Quadrature layout: v = (x_{-M}, p_{-M}, ..., x_{M}, p_{M}) with
// x = a + a^dag and p = -i(a - a^dag), so vacuum has unit variance in every
// quadrature and the symmetrized vacuum covariance is the identity.
inline int x_index(int k, int M) { return 2 * (k + M); }
inline int p_index(int k, int M) { return 2 * (k + M) + 1; }

// Real drift matrix of the linearized fluctuation dynamics dv/dt = A v + noise,
// assembled from the Wirtinger Jacobian (J, Jc) of the classical RHS:
//   A[x_j, x_m] =  Re(J + Jc)   A[x_j, p_m] = -Im(J - Jc)
//   A[p_j, x_m] =  Im(J + Jc)   A[p_j, p_m] =  Re(J - Jc)
inline Eigen::MatrixXd drift_matrix(const SystemParams& params, const ClassicalState& state) {
    const int M = params.M;
    const int n = params.n_modes();
    const ComplexJacobian jac = coupled_mode_jacobian(params, state);
    Eigen::MatrixXd A(2 * n, 2 * n);
    for (int j = 0; j < n; ++j) {
        for (int m = 0; m < n; ++m) {
            const Complex sum = jac.J(j, m) + jac.Jc(j, m);
            const Complex dif = jac.J(j, m) - jac.Jc(j, m);
            A(2 * j, 2 * m) = sum.real();
            A(2 * j, 2 * m + 1) = -dif.imag();
            A(2 * j + 1, 2 * m) = sum.imag();
            A(2 * j + 1, 2 * m + 1) = dif.real();
        }
    }
    (void)M;
    return A;
}

// Tangent of the U(theta) orbit A_k -> exp(i k theta) A_k at the state:
// delta a_k = i k A_k, mapped to quadratures. Zero for pump-only states.
inline Eigen::VectorXd goldstone_direction(const ClassicalState& state) {
    const int M = state.M();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2 * (2 * M + 1));
    for (int k = -M; k <= M; ++k) {
        const Complex da = Complex(0.0, 1.0) * double(k) * state.a(k);
        v[x_index(k, M)] = 2.0 * da.real();
        v[p_index(k, M)] = 2.0 * da.imag();
    }
    return v;
}

struct StabilitySpectrum {
    Eigen::VectorXcd eigenvalues;
    std::vector<bool> goldstone;  // per eigenvalue
    bool stable = false;          // max non-Goldstone real part <= 1e-9 kappa
    double max_real_part = 0.0;   // over non-Goldstone eigenvalues
    int goldstone_count = 0;
};

// Eigenvalues of the drift matrix with the near-zero mode generated by the
// comb phase symmetry identified (by magnitude and eigenvector overlap with
// the symmetry tangent) and excluded from the stability verdict.
inline StabilitySpectrum compute_stability(const SystemParams& params,
                                           const ClassicalState& state,
                                           double goldstone_tol_rel = 1e-9) {
    const Eigen::MatrixXd A = drift_matrix(params, state);
    Eigen::EigenSolver<Eigen::MatrixXd> es(A);
    StabilitySpectrum out;
    out.eigenvalues = es.eigenvalues();
    const int n = static_cast<int>(out.eigenvalues.size());
    out.goldstone.assign(n, false);

    Eigen::VectorXd gdir = goldstone_direction(state);
    const double gnorm = gdir.norm();
    const double tol = goldstone_tol_rel * params.kappa_max();
    if (gnorm > 0.0) {
        gdir /= gnorm;
        for (int i = 0; i < n; ++i) {
            if (std::abs(out.eigenvalues[i]) > tol) continue;
            const Eigen::VectorXcd v = es.eigenvectors().col(i);
            const double overlap = std::abs(v.adjoint().dot(gdir.cast<Complex>())) / v.norm();
            if (overlap > 0.5) {
                out.goldstone[i] = true;
                ++out.goldstone_count;
            }
        }
    }
    double max_re = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        if (!out.goldstone[i]) max_re = std::max(max_re, out.eigenvalues[i].real());
    out.max_real_part = max_re;
    out.stable = max_re <= tol;
    return out;
}

}  // namespace kerrcomb
