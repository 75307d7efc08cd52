#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/grid.hpp"
#include "closurelab/pde.hpp"

namespace closurelab {

inline constexpr double kBumpSharpness = 8.0;

/// Periodic spatial test functions sampled at cell centres. Row 0 is always the constant 1.
struct TestFunctionFamily {
    Grid1D grid{1};
    int n_fourier = 0;
    int n_bump = 0;
    Eigen::MatrixXd phi;   // members x n_x
    Eigen::MatrixXd dphi;  // exact derivatives at cell centres

    int size() const { return static_cast<int>(phi.rows()); }
};

/// {1} u {sin 2 pi k x, cos 2 pi k x}_{k<=n_fourier} u {exp(kappa (cos 2 pi (x - c_j) - 1))}_{j<n_bump}.
inline TestFunctionFamily build_test_functions(int n_fourier, int n_bump, const Grid1D& grid) {
    if (n_fourier < 0 || n_bump < 0) throw Error("build_test_functions: counts must be nonnegative");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    TestFunctionFamily family;
    family.grid = grid;
    family.n_fourier = n_fourier;
    family.n_bump = n_bump;
    const int members = 1 + 2 * n_fourier + n_bump;
    family.phi.setZero(members, grid.n_x);
    family.dphi.setZero(members, grid.n_x);
    family.phi.row(0).setOnes();
    int row = 1;
    for (int k = 1; k <= n_fourier; ++k) {
        const double w = two_pi * k;
        for (int i = 0; i < grid.n_x; ++i) {
            const double x = grid.x(i);
            family.phi(row, i) = std::sin(w * x);
            family.dphi(row, i) = w * std::cos(w * x);
            family.phi(row + 1, i) = std::cos(w * x);
            family.dphi(row + 1, i) = -w * std::sin(w * x);
        }
        row += 2;
    }
    for (int j = 0; j < n_bump; ++j) {
        const double c = static_cast<double>(j) / n_bump;
        for (int i = 0; i < grid.n_x; ++i) {
            const double arg = two_pi * (grid.x(i) - c);
            const double v = std::exp(kBumpSharpness * (std::cos(arg) - 1.0));
            family.phi(row, i) = v;
            family.dphi(row, i) = -v * kBumpSharpness * two_pi * std::sin(arg);
        }
        ++row;
    }
    return family;
}

/// Periodic trapezoid rule (uniform weight dx).
inline double quadrature(const State& f, const Grid1D& grid) { return grid.dx() * f.sum(); }

/// Weak residuals and, when assembled for dictionary identification, the linear system Phi theta = Y.
struct WeakResidualSystem {
    Eigen::MatrixXd residual;  // (interior snapshot) x (test function)
    Eigen::MatrixXd design;    // rows ordered by trajectory, snapshot, test function
    Eigen::VectorXd target;
    double quadrature_weight = 0.0;
    int degD = -1;
    int degR = -1;

    bool has_design() const { return design.size() > 0; }
};

namespace detail {
inline void require_three(const Trajectory& traj, const char* who) {
    if (traj.n_snapshots() < 3) throw Error(std::string(who) + ": need at least 3 snapshots for a central time difference");
}
inline void require_same_grid(const Trajectory& traj, const TestFunctionFamily& tests, const char* who) {
    if (traj.grid.n_x != tests.grid.n_x) throw Error(std::string(who) + ": test functions built on a different grid");
}
}  // namespace detail

/// r[n,k] = Q[phi_k u_t] + Q[D(u) u_x phi_k'] - Q[phi_k R(u)] at every interior saved time.
inline WeakResidualSystem weak_residual(const Trajectory& traj, const ClosurePair& closure, const TestFunctionFamily& tests) {
    detail::require_three(traj, "weak_residual");
    detail::require_same_grid(traj, tests, "weak_residual");
    const double dx = traj.grid.dx();
    const int interior = traj.n_snapshots() - 2;
    WeakResidualSystem sys;
    sys.quadrature_weight = dx;
    sys.residual.resize(interior, tests.size());
    for (int n = 1; n <= interior; ++n) {
        const State u = traj.snapshot(n);
        const State ut = (traj.snapshot(n + 1) - traj.snapshot(n - 1)) / (2.0 * traj.dt_save);
        const State ux = central_dx(u, dx);
        const State flux = closure.D_of(u) * ux;
        const State reaction = closure.R_of(u);
        const Eigen::VectorXd r = dx * (tests.phi * (ut - reaction).matrix() + tests.dphi * flux.matrix());
        sys.residual.row(n - 1) = r.transpose();
    }
    return sys;
}

/// Stacks the residual rows of several trajectories (trajectory order preserved).
inline WeakResidualSystem weak_residual(const std::vector<Trajectory>& trajs, const ClosurePair& closure,
                                        const TestFunctionFamily& tests) {
    if (trajs.empty()) throw Error("weak_residual: empty trajectory list");
    std::vector<WeakResidualSystem> parts;
    Eigen::Index rows = 0;
    for (const auto& t : trajs) {
        parts.push_back(weak_residual(t, closure, tests));
        rows += parts.back().residual.rows();
    }
    WeakResidualSystem sys;
    sys.quadrature_weight = parts.front().quadrature_weight;
    sys.residual.resize(rows, tests.size());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        sys.residual.middleRows(at, p.residual.rows()) = p.residual;
        at += p.residual.rows();
    }
    return sys;
}

/// Discrete mass balance d/dt Q[u] - Q[R(u)] at interior saved times, computed without test functions.
inline Eigen::VectorXd mass_balance_residual(const Trajectory& traj, const ClosurePair& closure) {
    detail::require_three(traj, "mass_balance_residual");
    const int interior = traj.n_snapshots() - 2;
    Eigen::VectorXd out(interior);
    for (int n = 1; n <= interior; ++n) {
        const double dmass = (quadrature(traj.snapshot(n + 1), traj.grid) - quadrature(traj.snapshot(n - 1), traj.grid)) / (2.0 * traj.dt_save);
        out[n - 1] = dmass - quadrature(closure.R_of(traj.snapshot(n)), traj.grid);
    }
    return out;
}

/// Mean of squared residual entries; no normalisation by signal energy.
inline double weak_loss(const WeakResidualSystem& sys) {
    if (sys.residual.size() == 0) throw Error("weak_loss: empty system");
    return sys.residual.array().square().mean();
}

/// Weak-form dictionary system: D(u) = sum_i a_i u^i, R(u) = sum_j b_j u^j.
/// Columns: a_i -> -Q[u^i u_x phi'], b_j -> Q[u^j phi]; target Q[phi u_t].
inline WeakResidualSystem assemble_design_matrix(const std::vector<Trajectory>& trajs, int degD, int degR,
                                                 const TestFunctionFamily& tests) {
    if (trajs.empty()) throw Error("assemble_design_matrix: empty trajectory list");
    if (degD < 0 || degR < 0) throw Error("assemble_design_matrix: degrees must be nonnegative");
    const int K = tests.size();
    const int cols = degD + 1 + degR + 1;
    Eigen::Index rows = 0;
    for (const auto& t : trajs) {
        detail::require_three(t, "assemble_design_matrix");
        detail::require_same_grid(t, tests, "assemble_design_matrix");
        rows += static_cast<Eigen::Index>(t.n_snapshots() - 2) * K;
    }
    WeakResidualSystem sys;
    sys.degD = degD;
    sys.degR = degR;
    sys.design.resize(rows, cols);
    sys.target.resize(rows);
    const double dx = trajs.front().grid.dx();
    sys.quadrature_weight = dx;
    Eigen::Index at = 0;
    for (const auto& t : trajs) {
        for (int n = 1; n + 1 < t.n_snapshots(); ++n) {
            const State u = t.snapshot(n);
            const State ut = (t.snapshot(n + 1) - t.snapshot(n - 1)) / (2.0 * t.dt_save);
            const State ux = central_dx(u, dx);
            State power = State::Ones(u.size());
            for (int i = 0; i <= std::max(degD, degR); ++i) {
                if (i <= degD) sys.design.block(at, i, K, 1) = -dx * (tests.dphi * (power * ux).matrix());
                if (i <= degR) sys.design.block(at, degD + 1 + i, K, 1) = dx * (tests.phi * power.matrix());
                power *= u;
            }
            sys.target.segment(at, K) = dx * (tests.phi * ut.matrix());
            at += K;
        }
    }
    return sys;
}

struct GramDiagnostics {
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    double condition_number = std::numeric_limits<double>::infinity();
    bool positive_definite = false;
    Eigen::VectorXd eigenvalues;
};

inline GramDiagnostics gram_diagnostics(const WeakResidualSystem& sys) {
    if (!sys.has_design()) throw Error("gram_diagnostics: system has no design matrix");
    const Eigen::MatrixXd G = sys.design.transpose() * sys.design;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
    GramDiagnostics d;
    d.eigenvalues = eig.eigenvalues();
    d.min_eigenvalue = d.eigenvalues.minCoeff();
    d.max_eigenvalue = d.eigenvalues.maxCoeff();
    d.positive_definite = d.min_eigenvalue > 1e-12 * d.max_eigenvalue && d.max_eigenvalue > 0.0;
    d.condition_number = d.min_eigenvalue > 0.0 ? d.max_eigenvalue / d.min_eigenvalue : std::numeric_limits<double>::infinity();
    return d;
}

}  // namespace closurelab
