#pragma once

#include <vector>

#include <Eigen/Dense>

#include "kerrcomb/params.hpp"

namespace kerrcomb {

// One four-wave-mixing channel a†_r a†_s a_p a_q with r + s = p + q.
struct CouplingQuadruple {
    int r, s, p, q;
};

// Every ordered quadruple (r,s,p,q) in [-M,M]^4 with r+s = p+q. Includes the
// self-phase (r=s=p=q) and cross-phase (r=p, s=q) channels. O((2M+1)^3).
inline std::vector<CouplingQuadruple> energy_conserving_quadruples(int M) {
    if (M < 1) throw ConfigError("energy_conserving_quadruples: M >= 1 required");
    std::vector<CouplingQuadruple> out;
    for (int r = -M; r <= M; ++r)
        for (int s = -M; s <= M; ++s)
            for (int p = -M; p <= M; ++p) {
                const int q = r + s - p;
                if (q >= -M && q <= M) out.push_back({r, s, p, q});
            }
    return out;
}

// Classical coupled-mode equations in the rotating frame of the equidistant
// grid:
//   F_j = -(kappa_j/2 + i delta_j) A_j
//         + i g sum_{p+q-r=j} A_p A_q conj(A_r)
//         + delta_{j,0} sqrt(kappa_ext_0) s_in
// with s_in = sqrt(P / hbar omega0) real (pump phase gauge).
inline Eigen::VectorXcd coupled_mode_rhs(const SystemParams& params,
                                         const ClassicalState& state,
                                         double pump_power) {
    const int M = params.M;
    const int n = params.n_modes();
    const Complex I(0.0, 1.0);
    Eigen::VectorXcd F(n);
    for (int j = -M; j <= M; ++j) {
        Complex lin = -(0.5 * params.kappa_total_at(j) + I * params.detuning_at(j)) * state.a(j);
        Complex nl(0.0, 0.0);
        for (int p = -M; p <= M; ++p)
            for (int q = -M; q <= M; ++q) {
                const int r = p + q - j;
                if (r < -M || r > M) continue;
                nl += state.a(p) * state.a(q) * std::conj(state.a(r));
            }
        F[j + M] = lin + I * params.g * nl;
        if (j == 0)
            F[j + M] += std::sqrt(params.kappa_ext_at(0)) * params.drive_amplitude_at(pump_power);
    }
    return F;
}

inline Eigen::VectorXcd coupled_mode_rhs(const SystemParams& params, const ClassicalState& state) {
    return coupled_mode_rhs(params, state, params.pump_power);
}

// Complex Wirtinger Jacobian of the RHS: J = dF/dA and Jc = dF/dA*.
//   J_jm  = -(kappa_j/2 + i delta_j) delta_jm + 2 i g sum_q A_q conj(A_{q+m-j})
//   Jc_jm = i g sum_p A_p A_{j+m-p}
struct ComplexJacobian {
    Eigen::MatrixXcd J;
    Eigen::MatrixXcd Jc;
};

inline ComplexJacobian coupled_mode_jacobian(const SystemParams& params,
                                             const ClassicalState& state) {
    const int M = params.M;
    const int n = params.n_modes();
    const Complex I(0.0, 1.0);
    ComplexJacobian jac;
    jac.J = Eigen::MatrixXcd::Zero(n, n);
    jac.Jc = Eigen::MatrixXcd::Zero(n, n);
    for (int j = -M; j <= M; ++j) {
        for (int m = -M; m <= M; ++m) {
            Complex sJ(0.0, 0.0), sJc(0.0, 0.0);
            for (int q = -M; q <= M; ++q) {
                const int r = q + m - j;
                if (r >= -M && r <= M) sJ += state.a(q) * std::conj(state.a(r));
            }
            for (int p = -M; p <= M; ++p) {
                const int q = j + m - p;
                if (q >= -M && q <= M) sJc += state.a(p) * state.a(q);
            }
            jac.J(j + M, m + M) = 2.0 * I * params.g * sJ;
            jac.Jc(j + M, m + M) = I * params.g * sJc;
        }
        jac.J(j + M, j + M) += -(0.5 * params.kappa_total_at(j) + I * params.detuning_at(j));
    }
    return jac;
}

}  // namespace kerrcomb
