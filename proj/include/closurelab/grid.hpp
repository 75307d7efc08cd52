#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "closurelab/error.hpp"

namespace closurelab {

using State = Eigen::ArrayXd;

/// Uniform cell-centred grid on the periodic unit interval.
struct Grid1D {
    int n_x = 0;

    explicit Grid1D(int cells) : n_x(cells) {
        if (cells <= 0) throw Error("Grid1D: cell count must be positive");
    }

    double dx() const noexcept { return 1.0 / n_x; }
    double x(int i) const noexcept { return (i + 0.5) / n_x; }
    int wrap(int i) const noexcept { return ((i % n_x) + n_x) % n_x; }

    State centers() const {
        State c(n_x);
        for (int i = 0; i < n_x; ++i) c[i] = x(i);
        return c;
    }

    friend bool operator==(const Grid1D&, const Grid1D&) = default;
};

/// Periodic shift: result[i] = a[i + offset mod n].
inline State roll(const State& a, int offset) {
    const Eigen::Index n = a.size();
    State out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index j = ((i + offset) % n + n) % n;
        out[i] = a[j];
    }
    return out;
}

/// Second-order central periodic first derivative.
inline State central_dx(const State& u, double dx) {
    return (roll(u, 1) - roll(u, -1)) / (2.0 * dx);
}

/// Three-point periodic second derivative.
inline State central_dxx(const State& u, double dx) {
    return (roll(u, 1) - 2.0 * u + roll(u, -1)) / (dx * dx);
}

inline void require_finite(const State& u, const char* what) {
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (!std::isfinite(u[i])) throw NonFiniteError(std::string(what) + ": non-finite value", static_cast<std::size_t>(i));
    }
}

}  // namespace closurelab
