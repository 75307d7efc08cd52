#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/grid.hpp"
#include "closurelab/rng.hpp"

namespace closurelab {

inline constexpr double kBlowUpBound = 1e6;
inline constexpr double kStabilityLimit = 0.25;
inline constexpr double kStateFloor = 1e-3;

using Snapshots = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SimulationConfig {
    double dt = 1e-4;
    double T = 0.1;
    int save_every = 10;
    int n_x = 64;

    long n_steps() const { return std::lround(T / dt); }

    void validate() const {
        if (!(dt > 0.0)) throw Error("SimulationConfig: dt must be positive");
        if (T < 0.0) throw Error("SimulationConfig: T must be nonnegative");
        if (save_every <= 0) throw Error("SimulationConfig: save_every must be positive");
        if (n_x <= 0) throw Error("SimulationConfig: n_x must be positive");
        if (std::abs(static_cast<double>(n_steps()) * dt - T) > dt) throw Error("SimulationConfig: T is not a whole number of steps");
    }
};

/// Saved snapshots on a uniform periodic grid. Row n is u(., t0 + n * dt_save).
struct Trajectory {
    Grid1D grid{1};
    double t0 = 0.0;
    double dt_save = 0.0;
    Snapshots states;
    std::uint64_t seed = 0;

    int n_snapshots() const { return static_cast<int>(states.rows()); }
    double time(int n) const { return t0 + n * dt_save; }
    std::vector<double> saved_times() const {
        std::vector<double> t(static_cast<std::size_t>(n_snapshots()));
        for (int n = 0; n < n_snapshots(); ++n) t[static_cast<std::size_t>(n)] = time(n);
        return t;
    }
    State snapshot(int n) const { return states.row(n).transpose(); }
    double min_state() const { return states.minCoeff(); }
    double max_state() const { return states.maxCoeff(); }
};

/// Conservative face-flux divergence of D(u) u_x with arithmetic-mean face states.
inline State flux_divergence(const State& u, const ClosurePair& closure, const Grid1D& grid) {
    if (u.size() != grid.n_x) throw Error("flux_divergence: state length does not match grid");
    require_finite(u, "flux_divergence");
    const double dx = grid.dx();
    const State up = roll(u, 1);
    const State face_u = 0.5 * (u + up);
    const State face_D = closure.D_of(face_u);
    const State flux = face_D * (up - u) / dx;
    return (flux - roll(flux, -1)) / dx;
}

inline State rhs(const State& u, const ClosurePair& closure, const Grid1D& grid) {
    return flux_divergence(u, closure, grid) + closure.R_of(u);
}

inline State rk4_step(const State& u, const ClosurePair& closure, const Grid1D& grid, double dt) {
    const State k1 = rhs(u, closure, grid);
    const State k2 = rhs(u + 0.5 * dt * k1, closure, grid);
    const State k3 = rhs(u + 0.5 * dt * k2, closure, grid);
    const State k4 = rhs(u + dt * k3, closure, grid);
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Largest D over the initial state values and a 65-point sweep of their range.
inline double max_diffusivity(const State& ic, const ClosurePair& closure) {
    const double lo = ic.minCoeff();
    const double hi = ic.maxCoeff();
    State probe(ic.size() + 65);
    probe.head(ic.size()) = ic;
    for (int i = 0; i <= 64; ++i) probe[ic.size() + i] = lo + (hi - lo) * i / 64.0;
    return closure.D_of(probe).maxCoeff();
}

/// Explicit RK4 integration; records every save_every-th state, including the initial one.
inline Trajectory simulate(const State& ic, const ClosurePair& closure, const SimulationConfig& config, std::uint64_t seed = 0) {
    config.validate();
    const Grid1D grid(config.n_x);
    if (ic.size() != grid.n_x) throw Error("simulate: initial condition does not match n_x");
    require_finite(ic, "simulate");
    const double dmax = max_diffusivity(ic, closure);
    const double number = dmax * config.dt / (grid.dx() * grid.dx());
    if (!(number <= kStabilityLimit)) {
        throw StabilityError("simulate: max(D) dt / dx^2 = " + std::to_string(number) + " exceeds " + std::to_string(kStabilityLimit));
    }

    const long steps = config.n_steps();
    const long n_saved = steps / config.save_every + 1;
    Trajectory traj;
    traj.grid = grid;
    traj.dt_save = config.dt * config.save_every;
    traj.seed = seed;
    traj.states.resize(n_saved, grid.n_x);
    traj.states.row(0) = ic.transpose();

    State u = ic;
    long saved = 1;
    for (long s = 1; s <= steps; ++s) {
        u = rk4_step(u, closure, grid, config.dt);
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            if (!std::isfinite(u[i]) || std::abs(u[i]) > kBlowUpBound) throw BlowUpError("simulate: state left the blow-up bound", s);
        }
        if (s % config.save_every == 0 && saved < n_saved) traj.states.row(saved++) = u.transpose();
    }
    return traj;
}

/// offset + sum_k a_k sin(2 pi k x + phi_k), a_k ~ U[-amplitude/k, amplitude/k], phi_k ~ U[0, 2 pi),
/// clipped below at the state floor.
inline State random_fourier_ic(int n_modes, double offset, double amplitude, std::uint64_t seed, const Grid1D& grid) {
    if (n_modes < 1) throw Error("random_fourier_ic: n_modes must be at least 1");
    if (amplitude < 0.0) throw Error("random_fourier_ic: amplitude must be nonnegative");
    auto gen = make_stream({streams::initial_condition, seed});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const State x = grid.centers();
    State u = State::Constant(grid.n_x, offset);
    for (int k = 1; k <= n_modes; ++k) {
        const double bound = amplitude / k;
        const double a = bound * (2.0 * unit(gen) - 1.0);
        const double phase = 2.0 * std::numbers::pi * unit(gen);
        u += a * (2.0 * std::numbers::pi * k * x + phase).sin();
    }
    return u.max(kStateFloor);
}

}  // namespace closurelab
