#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "closurelab/baselines.hpp"
#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/grid.hpp"
#include "closurelab/pde.hpp"

namespace closurelab {

inline constexpr double kNormGuard = 1e-12;
inline constexpr int kSupportPoints = 256;

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    bool empty() const { return !(hi >= lo); }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// L uniformly spaced points including both endpoints.
inline Eigen::ArrayXd support_grid(const Interval& support, int L = kSupportPoints) {
    if (support.empty()) throw Error("support_grid: empty interval");
    if (L < 2) throw Error("support_grid: need at least two points");
    Eigen::ArrayXd u(L);
    for (int l = 0; l < L; ++l) u[l] = support.lo + (support.hi - support.lo) * l / (L - 1);
    u[L - 1] = support.hi;
    return u;
}

/// ||a - b|| / (||a|| + 1e-12), with a the reference.
inline double relative_l2(const Eigen::ArrayXd& reference, const Eigen::ArrayXd& estimate) {
    return std::sqrt((reference - estimate).square().sum()) / (std::sqrt(reference.square().sum()) + kNormGuard);
}

struct ClosureErrorReport {
    double err_D = 0.0;
    double err_R = 0.0;
    Interval support;
    int L = kSupportPoints;
};

inline ClosureErrorReport closure_error(const ClosurePair& truth, const ClosurePair& est, const Interval& support, int L = kSupportPoints) {
    const auto u = support_grid(support, L);
    return {relative_l2(truth.D_of(u), est.D_of(u)), relative_l2(truth.R_of(u), est.R_of(u)), support, L};
}

/// ||a - b||_F / (||a||_F + 1e-12) over the full saved-trajectory arrays.
inline double trajectory_error(const Snapshots& truth, const Snapshots& pred) {
    if (truth.rows() != pred.rows() || truth.cols() != pred.cols()) throw Error("trajectory_error: shape mismatch");
    return std::sqrt((truth - pred).square().sum()) / (std::sqrt(truth.square().sum()) + kNormGuard);
}

struct RolloutReport {
    std::vector<double> per_ic;
    std::vector<bool> blew_up;
    double aggregate = 0.0;
    int n_saved = 0;
    double horizon = 0.0;

    bool any_blow_up() const { return std::find(blew_up.begin(), blew_up.end(), true) != blew_up.end(); }
};

/// Simulates truth and estimate from each shared initial condition; an estimate that blows up (or violates
/// the stability bound) is scored +inf and flagged rather than aborting.
inline RolloutReport rollout_error(const ClosurePair& truth, const ClosurePair& est, const std::vector<State>& unseen_ics,
                                   const SimulationConfig& config) {
    if (unseen_ics.empty()) throw Error("rollout_error: no initial conditions");
    RolloutReport rep;
    rep.horizon = config.T;
    double sum = 0.0;
    for (const auto& ic : unseen_ics) {
        const Trajectory ref = simulate(ic, truth, config);
        rep.n_saved = ref.n_snapshots();
        double e = std::numeric_limits<double>::infinity();
        bool failed = false;
        try {
            const Trajectory pred = simulate(ic, est, config);
            e = trajectory_error(ref.states, pred.states);
        } catch (const BlowUpError&) {
            failed = true;
        } catch (const StabilityError&) {
            failed = true;
        } catch (const NonFiniteError&) {
            failed = true;
        }
        rep.per_ic.push_back(e);
        rep.blew_up.push_back(failed);
        sum += e;
    }
    rep.aggregate = sum / static_cast<double>(unseen_ics.size());
    return rep;
}

struct BiasReport {
    double neural_err_D = 0.0, neural_err_R = 0.0;
    double symbolic_err_D = 0.0, symbolic_err_R = 0.0;
    std::optional<double> bir_D, bir_R;  // empty when the neural error is zero
    double compression_err_D = 0.0, compression_err_R = 0.0;  // relative to the neural curve
    double slack_D = 0.0, slack_R = 0.0;  // |‖f*-fs‖ - ‖f*-f̂‖| - ‖f̂-fs‖, absolute norms; never positive
};

inline BiasReport bias_inheritance(const Eigen::ArrayXd& trueD, const Eigen::ArrayXd& trueR, const Eigen::ArrayXd& neuralD,
                                   const Eigen::ArrayXd& neuralR, const Eigen::ArrayXd& symD, const Eigen::ArrayXd& symR) {
    BiasReport b;
    b.neural_err_D = relative_l2(trueD, neuralD);
    b.neural_err_R = relative_l2(trueR, neuralR);
    b.symbolic_err_D = relative_l2(trueD, symD);
    b.symbolic_err_R = relative_l2(trueR, symR);
    if (b.neural_err_D > 0.0) b.bir_D = b.symbolic_err_D / b.neural_err_D;
    if (b.neural_err_R > 0.0) b.bir_R = b.symbolic_err_R / b.neural_err_R;
    b.compression_err_D = relative_l2(neuralD, symD);
    b.compression_err_R = relative_l2(neuralR, symR);
    auto slack = [](const Eigen::ArrayXd& t, const Eigen::ArrayXd& n, const Eigen::ArrayXd& s) {
        const double a = std::sqrt((t - s).square().sum());
        const double c = std::sqrt((t - n).square().sum());
        return std::abs(a - c) - std::sqrt((n - s).square().sum());
    };
    b.slack_D = slack(trueD, neuralD, symD);
    b.slack_R = slack(trueR, neuralR, symR);
    return b;
}

inline BiasReport bias_inheritance(const ClosurePair& truth, const ClosurePair& neural, const ClosurePair& symbolic, const Interval& support,
                                   int L = kSupportPoints) {
    const auto u = support_grid(support, L);
    return bias_inheritance(truth.D_of(u), truth.R_of(u), neural.D_of(u), neural.R_of(u), symbolic.D_of(u), symbolic.R_of(u));
}

/// Terms of ‖f*-fs‖ <= ‖f*-f†‖ + ‖f†-f̂‖ + ‖f̂-fs‖ for one closure component (absolute discrete L2).
struct DecompositionTerms {
    double total = 0.0;           // ‖f* - f_sym‖
    double model_class_bias = 0.0;  // ‖f* - f†‖
    double identification = 0.0;  // ‖f† - f̂‖
    double compression = 0.0;     // ‖f̂ - f_sym‖
    bool bound_holds() const { return total <= model_class_bias + identification + compression + 1e-12 * (1.0 + total); }
};

struct ErrorDecomposition {
    DecompositionTerms D;
    DecompositionTerms R;
    PolyClosure best_in_class;
};

/// f† is approximated by a least-squares fit of the restricted polynomial class to the sampled truth curves.
inline ErrorDecomposition error_decomposition(const ClosurePair& truth, int degD, int degR, const ClosurePair& neural, const ClosurePair& symbolic,
                                              const Interval& support, int L = kSupportPoints) {
    const auto u = support_grid(support, L);
    auto vander = [&](int deg) {
        Eigen::MatrixXd V(L, deg + 1);
        for (int l = 0; l < L; ++l) {
            double p = 1.0;
            for (int i = 0; i <= deg; ++i) {
                V(l, i) = p;
                p *= u[l];
            }
        }
        return V;
    };
    const Eigen::ArrayXd tD = truth.D_of(u), tR = truth.R_of(u);
    ErrorDecomposition out;
    out.best_in_class.provenance = Provenance::weak_poly;
    out.best_in_class.aD = vander(degD).colPivHouseholderQr().solve(tD.matrix());
    out.best_in_class.bR = vander(degR).colPivHouseholderQr().solve(tR.matrix());
    const ClosurePair dagger = out.best_in_class.to_closure();
    auto norm = [](const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) { return std::sqrt((a - b).square().sum()); };
    auto fill = [&](const Eigen::ArrayXd& t, const Eigen::ArrayXd& d, const Eigen::ArrayXd& n, const Eigen::ArrayXd& s) {
        return DecompositionTerms{norm(t, s), norm(t, d), norm(d, n), norm(n, s)};
    };
    out.D = fill(tD, dagger.D_of(u), neural.D_of(u), symbolic.D_of(u));
    out.R = fill(tR, dagger.R_of(u), neural.R_of(u), symbolic.R_of(u));
    return out;
}

struct ExcitationDiagnostics {
    double bin_coverage = 0.0;
    double weak_diffusion_energy = 0.0;
};

/// Bin coverage of the reference interval and sum over trajectories of the time-trapezoid of Q[(u_x)^2].
inline ExcitationDiagnostics excitation_diagnostics(const std::vector<Trajectory>& trajs, const Interval& reference = {0.0, 1.0},
                                                    int n_bins = 8) {
    if (trajs.empty()) throw Error("excitation_diagnostics: no trajectories");
    if (n_bins <= 0) throw Error("excitation_diagnostics: n_bins must be positive");
    std::vector<bool> hit(static_cast<std::size_t>(n_bins), false);
    const double width = (reference.hi - reference.lo) / n_bins;
    ExcitationDiagnostics d;
    for (const auto& t : trajs) {
        for (Eigen::Index k = 0; k < t.states.size(); ++k) {
            const double v = t.states.data()[k];
            if (v < reference.lo || v > reference.hi) continue;
            int b = static_cast<int>(std::floor((v - reference.lo) / width));
            b = std::clamp(b, 0, n_bins - 1);
            hit[static_cast<std::size_t>(b)] = true;
        }
        const double dx = t.grid.dx();
        double energy = 0.0;
        for (int n = 0; n < t.n_snapshots(); ++n) {
            const double e = quadrature(central_dx(t.snapshot(n), dx).square(), t.grid);
            const double w = (n == 0 || n + 1 == t.n_snapshots()) ? 0.5 : 1.0;
            energy += w * e;
        }
        d.weak_diffusion_energy += energy * t.dt_save;
    }
    d.bin_coverage = static_cast<double>(std::count(hit.begin(), hit.end(), true)) / n_bins;
    return d;
}

}  // namespace closurelab
