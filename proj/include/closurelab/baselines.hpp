#pragma once

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/grid.hpp"
#include "closurelab/pde.hpp"
#include "closurelab/weak_form.hpp"

namespace closurelab {

inline constexpr double kDefaultRidge = 1e-8;

/// Monomial closure D(u) = sum_i aD[i] u^i, R(u) = sum_j bR[j] u^j.
struct PolyClosure {
    Eigen::VectorXd aD;
    Eigen::VectorXd bR;
    Provenance provenance = Provenance::weak_poly;

    static double horner(const Eigen::VectorXd& c, double u) {
        double acc = 0.0;
        for (Eigen::Index i = c.size() - 1; i >= 0; --i) acc = acc * u + c[i];
        return acc;
    }
    double D(double u) const { return horner(aD, u); }
    double R(double u) const { return horner(bR, u); }

    ClosurePair to_closure() const {
        return {[a = aD](double u) { return horner(a, u); }, [b = bR](double u) { return horner(b, u); }, provenance, {}, {}};
    }

    /// Labeled CSV: term,index,value.
    void write_csv(std::ostream& os) const {
        os.precision(17);
        os << "term,index,value\n";
        for (Eigen::Index i = 0; i < aD.size(); ++i) os << "D," << i << ',' << aD[i] << '\n';
        for (Eigen::Index j = 0; j < bR.size(); ++j) os << "R," << j << ',' << bR[j] << '\n';
    }
};

/// Solves (Phi^T Phi + lambda I) theta = Phi^T Y through a QR factorisation of the
/// augmented matrix [Phi; sqrt(lambda) I], which avoids forming the Gram matrix.
inline Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& Y, double lambda) {
    if (Phi.size() == 0) throw Error("ridge_solve: empty design matrix");
    if (Phi.rows() != Y.size()) throw Error("ridge_solve: design and target row counts differ");
    if (lambda < 0.0) throw Error("ridge_solve: lambda must be nonnegative");
    const Eigen::Index p = Phi.cols();
    if (lambda == 0.0) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
        if (qr.rank() < p) throw SingularSystemError("ridge_solve: Gram matrix is singular at lambda = 0; use lambda > 0");
        return qr.solve(Y);
    }
    Eigen::MatrixXd A(Phi.rows() + p, p);
    A.topRows(Phi.rows()) = Phi;
    A.bottomRows(p) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(Phi.rows() + p);
    b.head(Y.size()) = Y;
    return Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(A).solve(b);
}

inline PolyClosure split_coefficients(const Eigen::VectorXd& theta, int degD, int degR, Provenance tag) {
    PolyClosure p;
    p.aD = theta.head(degD + 1);
    p.bR = theta.segment(degD + 1, degR + 1);
    p.provenance = tag;
    return p;
}

inline PolyClosure fit_weak_poly(const std::vector<Trajectory>& trajs, const TestFunctionFamily& tests, int degD = 2, int degR = 3,
                                 double lambda = kDefaultRidge) {
    const auto sys = assemble_design_matrix(trajs, degD, degR, tests);
    return split_coefficients(ridge_solve(sys.design, sys.target, lambda), degD, degR, Provenance::weak_poly);
}

/// Conservative divergence d/dx(g(u) u_x) with face values g((u_i + u_{i+1}) / 2), the stencil the solver uses.
inline State conservative_divergence(const State& u, const State& face_g, double dx) {
    const State flux = face_g * (roll(u, 1) - u) / dx;
    return (flux - roll(flux, -1)) / dx;
}

/// Pointwise strong-form system: u_t = sum_i a_i d/dx(u^i u_x) + sum_j b_j u^j over all cells of all
/// interior saved times. The diffusion features use the same face-mean flux stencil as the solver.
inline WeakResidualSystem assemble_strong_system(const std::vector<Trajectory>& trajs, int degD, int degR) {
    if (trajs.empty()) throw Error("assemble_strong_system: empty trajectory list");
    if (degD < 0 || degR < 0) throw Error("assemble_strong_system: degrees must be nonnegative");
    Eigen::Index rows = 0;
    for (const auto& t : trajs) {
        if (t.n_snapshots() < 3) throw Error("fit_strong_poly: need at least 3 snapshots");
        rows += static_cast<Eigen::Index>(t.n_snapshots() - 2) * t.grid.n_x;
    }
    WeakResidualSystem sys;
    sys.degD = degD;
    sys.degR = degR;
    sys.design.resize(rows, degD + degR + 2);
    sys.target.resize(rows);
    Eigen::Index at = 0;
    for (const auto& t : trajs) {
        const double dx = t.grid.dx();
        const int nx = t.grid.n_x;
        for (int n = 1; n + 1 < t.n_snapshots(); ++n) {
            const State u = t.snapshot(n);
            const State face_u = 0.5 * (u + roll(u, 1));
            State face_pow = State::Ones(nx);
            for (int i = 0; i <= degD; ++i) {
                sys.design.block(at, i, nx, 1) = conservative_divergence(u, face_pow, dx).matrix();
                face_pow *= face_u;
            }
            State power = State::Ones(nx);
            for (int j = 0; j <= degR; ++j) {
                sys.design.block(at, degD + 1 + j, nx, 1) = power.matrix();
                power *= u;
            }
            sys.target.segment(at, nx) = ((t.snapshot(n + 1) - t.snapshot(n - 1)) / (2.0 * t.dt_save)).matrix();
            at += nx;
        }
    }
    return sys;
}

inline PolyClosure fit_strong_poly(const std::vector<Trajectory>& trajs, int degD = 2, int degR = 3, double lambda = kDefaultRidge) {
    const auto sys = assemble_strong_system(trajs, degD, degR);
    return split_coefficients(ridge_solve(sys.design, sys.target, lambda), degD, degR, Provenance::strong_poly);
}

}  // namespace closurelab
