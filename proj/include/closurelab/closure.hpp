#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Core>

#include "closurelab/error.hpp"

namespace closurelab {

enum class Provenance { truth, strong_poly, weak_poly, neural, symbolic };

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::truth: return "truth";
        case Provenance::strong_poly: return "strong_poly";
        case Provenance::weak_poly: return "weak_poly";
        case Provenance::neural: return "neural";
        case Provenance::symbolic: return "symbolic";
    }
    return "unknown";
}

using ScalarMap = std::function<double(double)>;
using BatchMap = std::function<void(std::span<const double>, std::span<double>)>;

/// A diffusivity / reaction pair. Scalar maps are mandatory; batched maps are an optional fast path
/// used by the solver when a closure is expensive to evaluate point by point (neural surrogates).
struct ClosurePair {
    ScalarMap D;
    ScalarMap R;
    Provenance provenance = Provenance::truth;
    BatchMap D_batch;
    BatchMap R_batch;

    void eval_D(std::span<const double> u, std::span<double> out) const {
        if (D_batch) {
            D_batch(u, out);
            return;
        }
        for (std::size_t i = 0; i < u.size(); ++i) out[i] = D(u[i]);
    }
    void eval_R(std::span<const double> u, std::span<double> out) const {
        if (R_batch) {
            R_batch(u, out);
            return;
        }
        for (std::size_t i = 0; i < u.size(); ++i) out[i] = R(u[i]);
    }

    Eigen::ArrayXd D_of(const Eigen::ArrayXd& u) const {
        Eigen::ArrayXd out(u.size());
        eval_D({u.data(), static_cast<std::size_t>(u.size())}, {out.data(), static_cast<std::size_t>(out.size())});
        return out;
    }
    Eigen::ArrayXd R_of(const Eigen::ArrayXd& u) const {
        Eigen::ArrayXd out(u.size());
        eval_R({u.data(), static_cast<std::size_t>(u.size())}, {out.data(), static_cast<std::size_t>(out.size())});
        return out;
    }
};

enum class CaseId { A, B, Exp };

inline std::string_view to_string(CaseId c) {
    switch (c) {
        case CaseId::A: return "A";
        case CaseId::B: return "B";
        case CaseId::Exp: return "Exp";
    }
    return "?";
}

inline CaseId parse_case(std::string_view s) {
    if (s == "A" || s == "a") return CaseId::A;
    if (s == "B" || s == "b") return CaseId::B;
    if (s == "Exp" || s == "exp" || s == "EXP") return CaseId::Exp;
    throw Error("unknown case id '" + std::string(s) + "' (expected A, B or Exp)");
}

/// Ground-truth benchmark closures.
inline ClosurePair true_closure(CaseId c) {
    switch (c) {
        case CaseId::A:
            return {[](double u) { return 0.01 + 0.05 * u; }, [](double u) { return u * (1.0 - u); }, Provenance::truth, {}, {}};
        case CaseId::B:
            return {[](double u) { return 0.01 + 0.03 * u * u; },
                    [](double u) { return u - 1.5 * u * u + 0.5 * u * u * u; }, Provenance::truth, {}, {}};
        case CaseId::Exp:
            return {[](double u) { return 0.01 + 0.035 * (1.0 - std::exp(-2.5 * u)); },
                    [](double u) { return u * (1.1 * std::exp(-1.4 * u) - 0.22); }, Provenance::truth, {}, {}};
    }
    throw Error("unknown case id");
}

}  // namespace closurelab
