#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/rng.hpp"

namespace closurelab {

inline constexpr int kMultiStarts = 8;
inline constexpr int kMaxIterations = 200;
inline constexpr double kDenominatorMargin = 0.1;
inline constexpr double kDenominatorPenalty = 1e3;
inline constexpr double kSelectRelTol = 0.05;
inline constexpr double kSelectAbsTol = 1e-8;

enum class Family { poly0, poly1, poly2, poly3, poly4, rational22, exp_decay, saturation, u_exp, u_saturation };

inline std::string_view to_string(Family f) {
    switch (f) {
        case Family::poly0: return "poly0";
        case Family::poly1: return "poly1";
        case Family::poly2: return "poly2";
        case Family::poly3: return "poly3";
        case Family::poly4: return "poly4";
        case Family::rational22: return "rational22";
        case Family::exp_decay: return "exp_decay";
        case Family::saturation: return "saturation";
        case Family::u_exp: return "u_exp";
        case Family::u_saturation: return "u_saturation";
    }
    return "?";
}

inline Family parse_family(std::string_view s) {
    for (Family f : {Family::poly0, Family::poly1, Family::poly2, Family::poly3, Family::poly4, Family::rational22, Family::exp_decay,
                     Family::saturation, Family::u_exp, Family::u_saturation})
        if (to_string(f) == s) return f;
    throw SchemaError("unknown symbolic family '" + std::string(s) + "'");
}

inline int poly_degree(Family f) {
    switch (f) {
        case Family::poly0: return 0;
        case Family::poly1: return 1;
        case Family::poly2: return 2;
        case Family::poly3: return 3;
        case Family::poly4: return 4;
        default: return -1;
    }
}

inline int parameter_count(Family f) {
    if (const int d = poly_degree(f); d >= 0) return d + 1;
    return f == Family::rational22 ? 5 : 3;
}

/// Nonlinear parameters (searched over a box); the rest enter linearly given these.
inline int nonlinear_count(Family f) {
    if (poly_degree(f) >= 0) return 0;
    return f == Family::rational22 ? 2 : 1;
}

struct ParameterBox {
    std::vector<double> lo, hi;  // nonlinear parameters only
};

/// Multi-start boxes: rational (b1, b2) in [-1, 1]^2; exp_decay c in [0.1, 10]; saturation c in [0, 10];
/// u_exp b in [-5, 5]; u_saturation b in [0, 10].
inline ParameterBox parameter_box(Family f) {
    switch (f) {
        case Family::rational22: return {{-1.0, -1.0}, {1.0, 1.0}};
        case Family::exp_decay: return {{0.1}, {10.0}};
        case Family::saturation: return {{0.0}, {10.0}};
        case Family::u_exp: return {{-5.0}, {5.0}};
        case Family::u_saturation: return {{0.0}, {10.0}};
        default: return {};
    }
}

/// Candidate families: D = {poly0..3, rational22, exp_decay, saturation}; R = {poly0..4, rational22, u_exp, u_saturation}.
struct CandidateLibrary {
    std::vector<Family> diffusion{Family::poly0, Family::poly1, Family::poly2, Family::poly3, Family::rational22, Family::exp_decay, Family::saturation};
    std::vector<Family> reaction{Family::poly0, Family::poly1, Family::poly2, Family::poly3, Family::poly4, Family::rational22, Family::u_exp, Family::u_saturation};
};

namespace sym_detail {
/// Parameter order:
///   poly_k: a0..ak;  rational22: a0 a1 a2 b1 b2;  exp_decay: a b c;  saturation: a b c;
///   u_exp: a b c (u (a e^{bu} + c));  u_saturation: a b c (a u / (1 + b u) + c u).
inline Eigen::ArrayXd evaluate(Family f, const Eigen::VectorXd& p, const Eigen::ArrayXd& u) {
    if (const int d = poly_degree(f); d >= 0) {
        Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(u.size());
        for (int i = d; i >= 0; --i) acc = acc * u + p[i];
        return acc;
    }
    switch (f) {
        case Family::rational22: return (p[0] + p[1] * u + p[2] * u.square()) / (1.0 + p[3] * u + p[4] * u.square());
        case Family::exp_decay: return p[0] + p[1] * (1.0 - (-p[2] * u).exp());
        case Family::saturation: return p[0] + p[1] * u / (1.0 + p[2] * u);
        case Family::u_exp: return u * (p[0] * (p[1] * u).exp() + p[2]);
        case Family::u_saturation: return p[0] * u / (1.0 + p[1] * u) + p[2] * u;
        default: break;
    }
    throw Error("evaluate: unknown family");
}

inline Eigen::MatrixXd jacobian(Family f, const Eigen::VectorXd& p, const Eigen::ArrayXd& u) {
    const Eigen::Index L = u.size();
    Eigen::MatrixXd J(L, parameter_count(f));
    if (const int d = poly_degree(f); d >= 0) {
        Eigen::ArrayXd pw = Eigen::ArrayXd::Ones(L);
        for (int i = 0; i <= d; ++i) {
            J.col(i) = pw.matrix();
            pw *= u;
        }
        return J;
    }
    switch (f) {
        case Family::rational22: {
            const Eigen::ArrayXd den = 1.0 + p[3] * u + p[4] * u.square();
            const Eigen::ArrayXd val = (p[0] + p[1] * u + p[2] * u.square()) / den;
            J.col(0) = den.inverse().matrix();
            J.col(1) = (u / den).matrix();
            J.col(2) = (u.square() / den).matrix();
            J.col(3) = (-val * u / den).matrix();
            J.col(4) = (-val * u.square() / den).matrix();
            return J;
        }
        case Family::exp_decay: {
            const Eigen::ArrayXd e = (-p[2] * u).exp();
            J.col(0).setOnes();
            J.col(1) = (1.0 - e).matrix();
            J.col(2) = (p[1] * u * e).matrix();
            return J;
        }
        case Family::saturation: {
            const Eigen::ArrayXd den = 1.0 + p[2] * u;
            J.col(0).setOnes();
            J.col(1) = (u / den).matrix();
            J.col(2) = (-p[1] * u.square() / den.square()).matrix();
            return J;
        }
        case Family::u_exp: {
            const Eigen::ArrayXd e = (p[1] * u).exp();
            J.col(0) = (u * e).matrix();
            J.col(1) = (p[0] * u.square() * e).matrix();
            J.col(2) = u.matrix();
            return J;
        }
        case Family::u_saturation: {
            const Eigen::ArrayXd den = 1.0 + p[1] * u;
            J.col(0) = (u / den).matrix();
            J.col(1) = (-p[0] * u.square() / den.square()).matrix();
            J.col(2) = u.matrix();
            return J;
        }
        default: break;
    }
    throw Error("jacobian: unknown family");
}

inline bool has_denominator(Family f) {
    return f == Family::rational22 || f == Family::saturation || f == Family::u_saturation;
}

/// Denominator values and their parameter Jacobian (only for families with a denominator).
inline void denominator(Family f, const Eigen::VectorXd& p, const Eigen::ArrayXd& u, Eigen::ArrayXd& den, Eigen::MatrixXd& dden) {
    const Eigen::Index L = u.size();
    dden.setZero(L, parameter_count(f));
    switch (f) {
        case Family::rational22:
            den = 1.0 + p[3] * u + p[4] * u.square();
            dden.col(3) = u.matrix();
            dden.col(4) = u.square().matrix();
            return;
        case Family::saturation:
            den = 1.0 + p[2] * u;
            dden.col(2) = u.matrix();
            return;
        case Family::u_saturation:
            den = 1.0 + p[1] * u;
            dden.col(1) = u.matrix();
            return;
        default: den = Eigen::ArrayXd::Ones(L); return;
    }
}

/// Columns multiplying the linear parameters once the nonlinear ones (q) are fixed.
inline Eigen::MatrixXd linear_basis(Family f, const std::vector<double>& q, const Eigen::ArrayXd& u) {
    const Eigen::Index L = u.size();
    switch (f) {
        case Family::rational22: {
            const Eigen::ArrayXd den = 1.0 + q[0] * u + q[1] * u.square();
            Eigen::MatrixXd B(L, 3);
            B.col(0) = den.inverse().matrix();
            B.col(1) = (u / den).matrix();
            B.col(2) = (u.square() / den).matrix();
            return B;
        }
        case Family::exp_decay: {
            Eigen::MatrixXd B(L, 2);
            B.col(0).setOnes();
            B.col(1) = (1.0 - (-q[0] * u).exp()).matrix();
            return B;
        }
        case Family::saturation: {
            Eigen::MatrixXd B(L, 2);
            B.col(0).setOnes();
            B.col(1) = (u / (1.0 + q[0] * u)).matrix();
            return B;
        }
        case Family::u_exp: {
            Eigen::MatrixXd B(L, 2);
            B.col(0) = (u * (q[0] * u).exp()).matrix();
            B.col(1) = u.matrix();
            return B;
        }
        case Family::u_saturation: {
            Eigen::MatrixXd B(L, 2);
            B.col(0) = (u / (1.0 + q[0] * u)).matrix();
            B.col(1) = u.matrix();
            return B;
        }
        default: break;
    }
    throw Error("linear_basis: not a nonlinear family");
}

inline Eigen::VectorXd assemble(Family f, const std::vector<double>& q, const Eigen::VectorXd& lin) {
    Eigen::VectorXd p(parameter_count(f));
    switch (f) {
        case Family::rational22: p << lin[0], lin[1], lin[2], q[0], q[1]; break;
        case Family::exp_decay:
        case Family::saturation: p << lin[0], lin[1], q[0]; break;
        case Family::u_exp:
        case Family::u_saturation: p << lin[0], q[0], lin[1]; break;
        default: throw Error("assemble: not a nonlinear family");
    }
    return p;
}

struct Objective {
    double cost = std::numeric_limits<double>::infinity();  // 0.5 |r|^2 including penalty rows
    double mse = std::numeric_limits<double>::infinity();
};

inline Objective objective(Family f, const Eigen::VectorXd& p, const Eigen::ArrayXd& u, const Eigen::ArrayXd& y) {
    Objective o;
    const Eigen::ArrayXd r = evaluate(f, p, u) - y;
    if (!r.allFinite()) return o;
    double c = 0.5 * r.square().sum();
    if (has_denominator(f)) {
        Eigen::ArrayXd den;
        Eigen::MatrixXd dden;
        denominator(f, p, u, den, dden);
        c += 0.5 * (kDenominatorPenalty * (kDenominatorMargin - den).max(0.0)).square().sum();
    }
    o.cost = c;
    o.mse = r.square().mean();
    return o;
}

/// Levenberg-Marquardt with Marquardt diagonal scaling; the penalty rows keep denominators above the margin.
inline Eigen::VectorXd levenberg_marquardt(Family f, Eigen::VectorXd p, const Eigen::ArrayXd& u, const Eigen::ArrayXd& y, int max_iter) {
    const Eigen::Index L = u.size();
    const int np = parameter_count(f);
    double mu = 1e-3;
    Objective cur = objective(f, p, u, y);
    if (!std::isfinite(cur.cost)) return p;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::MatrixXd J = jacobian(f, p, u);
        Eigen::VectorXd r = (evaluate(f, p, u) - y).matrix();
        if (has_denominator(f)) {
            Eigen::ArrayXd den;
            Eigen::MatrixXd dden;
            denominator(f, p, u, den, dden);
            const Eigen::ArrayXd viol = kDenominatorMargin - den;
            Eigen::MatrixXd Jp = Eigen::MatrixXd::Zero(L, np);
            Eigen::VectorXd rp = Eigen::VectorXd::Zero(L);
            for (Eigen::Index l = 0; l < L; ++l) {
                if (viol[l] > 0.0) {
                    rp[l] = kDenominatorPenalty * viol[l];
                    Jp.row(l) = -kDenominatorPenalty * dden.row(l);
                }
            }
            Eigen::MatrixXd Jx(2 * L, np);
            Jx << J, Jp;
            Eigen::VectorXd rx(2 * L);
            rx << r, rp;
            J = std::move(Jx);
            r = std::move(rx);
        }
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-300) break;
        bool accepted = false;
        while (mu < 1e20) {
            Eigen::MatrixXd M = A;
            for (int i = 0; i < np; ++i) M(i, i) += mu * std::max(A(i, i), 1e-30);
            const Eigen::VectorXd step = M.ldlt().solve(-g);
            if (!step.allFinite()) {
                mu *= 4.0;
                continue;
            }
            const Eigen::VectorXd trial = p + step;
            const Objective o = objective(f, trial, u, y);
            if (std::isfinite(o.cost) && o.cost <= cur.cost) {
                const double rel = (cur.cost - o.cost) / std::max(cur.cost, 1e-300);
                const double step_rel = step.norm() / (p.norm() + 1e-300);
                p = trial;
                cur = o;
                mu = std::max(mu / 3.0, 1e-15);
                accepted = true;
                if (rel < 1e-16 && step_rel < 1e-14) return p;
                break;
            }
            mu *= 4.0;
        }
        if (!accepted || cur.cost == 0.0) break;
    }
    return p;
}
}  // namespace sym_detail

struct FitResult {
    Family family = Family::poly0;
    Eigen::VectorXd params;
    double fit_error = std::numeric_limits<double>::infinity();  // mean squared error on the samples
};

/// Linear families by least squares; nonlinear ones by multi-start LM. Start 0 is the box centre, the other
/// starts are uniform box draws; each start first solves the linear parameters exactly.
inline FitResult fit_family(const Eigen::ArrayXd& u, const Eigen::ArrayXd& y, Family f, std::uint64_t seed = 0, int n_starts = kMultiStarts,
                            int max_iter = kMaxIterations) {
    if (u.size() != y.size()) throw Error("fit_family: sample size mismatch");
    const int np = parameter_count(f);
    if (u.size() < np) throw Error("fit_family: fewer samples than parameters");
    FitResult best;
    best.family = f;
    best.params = Eigen::VectorXd::Zero(np);
    if (poly_degree(f) >= 0) {
        const Eigen::MatrixXd J = sym_detail::jacobian(f, Eigen::VectorXd::Zero(np), u);
        best.params = J.colPivHouseholderQr().solve(y.matrix());
        best.fit_error = sym_detail::objective(f, best.params, u, y).mse;
        return best;
    }
    const ParameterBox box = parameter_box(f);
    auto gen = make_stream({streams::multistart, static_cast<std::uint64_t>(f), seed});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double best_cost = std::numeric_limits<double>::infinity();
    for (int s = 0; s < n_starts; ++s) {
        std::vector<double> q(box.lo.size());
        for (std::size_t k = 0; k < q.size(); ++k) {
            const double t = s == 0 ? 0.5 : unit(gen);
            q[k] = box.lo[k] + t * (box.hi[k] - box.lo[k]);
        }
        const Eigen::MatrixXd B = sym_detail::linear_basis(f, q, u);
        if (!B.allFinite()) continue;
        const Eigen::VectorXd lin = B.colPivHouseholderQr().solve(y.matrix());
        const Eigen::VectorXd p = sym_detail::levenberg_marquardt(f, sym_detail::assemble(f, q, lin), u, y, max_iter);
        const auto o = sym_detail::objective(f, p, u, y);
        if (std::isfinite(o.cost) && o.cost < best_cost) {
            best_cost = o.cost;
            best.params = p;
            best.fit_error = o.mse;
        }
    }
    return best;
}

namespace sym_detail {
/// Expression tree used for printing and pruned node counting.
struct Node {
    enum Kind { param, state, literal, zero, add, sub, mul, div, neg, exp } kind;
    double value = 0.0;
    std::vector<std::shared_ptr<Node>> kids;
};
using NodePtr = std::shared_ptr<Node>;

inline NodePtr leaf_param(double v) { return std::make_shared<Node>(Node{v == 0.0 ? Node::zero : Node::param, v, {}}); }
inline NodePtr leaf_state() { return std::make_shared<Node>(Node{Node::state, 0.0, {}}); }
inline NodePtr leaf_one() { return std::make_shared<Node>(Node{Node::literal, 1.0, {}}); }
inline bool is_zero(const NodePtr& n) { return n->kind == Node::zero; }
inline bool is_one(const NodePtr& n) { return n->kind == Node::literal && n->value == 1.0; }

inline NodePtr mul(NodePtr a, NodePtr b) {
    if (is_zero(a) || is_zero(b)) return std::make_shared<Node>(Node{Node::zero, 0.0, {}});
    return std::make_shared<Node>(Node{Node::mul, 0.0, {std::move(a), std::move(b)}});
}
inline NodePtr add(std::vector<NodePtr> terms) {
    std::vector<NodePtr> kept;
    for (auto& t : terms)
        if (!is_zero(t)) kept.push_back(std::move(t));
    if (kept.empty()) return std::make_shared<Node>(Node{Node::zero, 0.0, {}});
    NodePtr acc = kept.front();
    for (std::size_t i = 1; i < kept.size(); ++i) acc = std::make_shared<Node>(Node{Node::add, 0.0, {acc, kept[i]}});
    return acc;
}
inline NodePtr neg(NodePtr a) {
    if (is_zero(a)) return a;
    return std::make_shared<Node>(Node{Node::neg, 0.0, {std::move(a)}});
}
inline NodePtr sub(NodePtr a, NodePtr b) {
    if (is_zero(b)) return a;
    if (is_zero(a)) return neg(std::move(b));
    return std::make_shared<Node>(Node{Node::sub, 0.0, {std::move(a), std::move(b)}});
}
inline NodePtr divide(NodePtr a, NodePtr b) {
    if (is_zero(a)) return a;
    if (is_one(b)) return a;
    return std::make_shared<Node>(Node{Node::div, 0.0, {std::move(a), std::move(b)}});
}
inline NodePtr exp_of(NodePtr a) {
    if (is_zero(a)) return leaf_one();
    return std::make_shared<Node>(Node{Node::exp, 0.0, {std::move(a)}});
}
/// u^k as a left-nested product chain of state symbols.
inline NodePtr power(int k) {
    NodePtr acc = leaf_state();
    for (int i = 1; i < k; ++i) acc = mul(acc, leaf_state());
    return acc;
}
inline NodePtr polynomial(const double* c, int degree, NodePtr constant_term) {
    std::vector<NodePtr> terms{constant_term};
    for (int i = 1; i <= degree; ++i) terms.push_back(mul(leaf_param(c[i]), power(i)));
    return add(std::move(terms));
}

/// Canonical trees:
///   poly_k        a0 + a1*u + a2*(u*u) + ...
///   rational22    (a0 + a1*u + a2*(u*u)) / (1 + b1*u + b2*(u*u))
///   exp_decay     a + b*(1 - exp(-(c*u)))
///   saturation    a + b*(u / (1 + c*u))
///   u_exp         u * (a*exp(b*u) + c)
///   u_saturation  a*(u / (1 + b*u)) + c*u
inline NodePtr tree(Family f, const Eigen::VectorXd& p) {
    if (const int d = poly_degree(f); d >= 0) return polynomial(p.data(), d, leaf_param(p[0]));
    switch (f) {
        case Family::rational22: {
            const double b[3] = {1.0, p[3], p[4]};
            return divide(polynomial(p.data(), 2, leaf_param(p[0])), polynomial(b, 2, leaf_one()));
        }
        case Family::exp_decay:
            return add({leaf_param(p[0]), mul(leaf_param(p[1]), sub(leaf_one(), exp_of(neg(mul(leaf_param(p[2]), leaf_state())))))});
        case Family::saturation:
            return add({leaf_param(p[0]), mul(leaf_param(p[1]), divide(leaf_state(), add({leaf_one(), mul(leaf_param(p[2]), leaf_state())})))});
        case Family::u_exp:
            return mul(leaf_state(), add({mul(leaf_param(p[0]), exp_of(mul(leaf_param(p[1]), leaf_state()))), leaf_param(p[2])}));
        case Family::u_saturation:
            return add({mul(leaf_param(p[0]), divide(leaf_state(), add({leaf_one(), mul(leaf_param(p[1]), leaf_state())}))),
                        mul(leaf_param(p[2]), leaf_state())});
        default: break;
    }
    throw Error("tree: unknown family");
}

inline int count(const NodePtr& n) {
    if (n->kind == Node::zero) return 1;
    int c = 1;
    for (const auto& k : n->kids) c += count(k);
    return c;
}

inline std::string render(const NodePtr& n) {
    char buf[40];
    switch (n->kind) {
        case Node::param: std::snprintf(buf, sizeof buf, "%.17g", n->value); return buf;
        case Node::state: return "u";
        case Node::literal: std::snprintf(buf, sizeof buf, "%g", n->value); return buf;
        case Node::zero: return "0";
        case Node::add: return "(" + render(n->kids[0]) + " + " + render(n->kids[1]) + ")";
        case Node::sub: return "(" + render(n->kids[0]) + " - " + render(n->kids[1]) + ")";
        case Node::mul: return render(n->kids[0]) + "*" + render(n->kids[1]);
        case Node::div: return "(" + render(n->kids[0]) + ")/(" + render(n->kids[1]) + ")";
        case Node::neg: return "-(" + render(n->kids[0]) + ")";
        case Node::exp: return "exp(" + render(n->kids[0]) + ")";
    }
    return "?";
}
}  // namespace sym_detail

/// Pruned node count of the canonical tree: every parameter, state symbol, literal and operator counts 1,
/// and a parameter that is exactly 0 removes its enclosing product (and the sum node that joined it).
inline int complexity(Family f, const Eigen::VectorXd& params) { return sym_detail::count(sym_detail::tree(f, params)); }

struct SymbolicExpression {
    Family family = Family::poly0;
    Eigen::VectorXd params = Eigen::VectorXd::Zero(1);
    int complexity = 1;
    double fit_error = 0.0;

    double operator()(double u) const { return sym_detail::evaluate(family, params, Eigen::ArrayXd::Constant(1, u))[0]; }
    Eigen::ArrayXd operator()(const Eigen::ArrayXd& u) const { return sym_detail::evaluate(family, params, u); }
    std::string formula() const { return sym_detail::render(sym_detail::tree(family, params)); }

    static SymbolicExpression from(const FitResult& fit) {
        return {fit.family, fit.params, closurelab::complexity(fit.family, fit.params), fit.fit_error};
    }

    /// One-line text record: family, parameter count, parameters at full precision, complexity, fit error, formula.
    void write(std::ostream& os) const {
        char buf[40];
        os << to_string(family) << ' ' << params.size();
        for (Eigen::Index i = 0; i < params.size(); ++i) {
            std::snprintf(buf, sizeof buf, " %.17g", params[i]);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, " %.17g", fit_error);
        os << ' ' << complexity << buf << " | " << formula() << '\n';
    }

    static SymbolicExpression read(const std::string& line) {
        std::istringstream in(line);
        std::string tag;
        int n = 0;
        in >> tag >> n;
        if (!in || n <= 0) throw SchemaError("symbolic record: malformed header in '" + line + "'");
        SymbolicExpression e;
        e.family = parse_family(tag);
        if (n != parameter_count(e.family)) throw SchemaError("symbolic record: wrong parameter count for " + tag);
        e.params.resize(n);
        for (int i = 0; i < n; ++i) {
            std::string tok;
            in >> tok;
            e.params[i] = std::strtod(tok.c_str(), nullptr);
        }
        std::string err;
        in >> e.complexity >> err;
        if (!in) throw SchemaError("symbolic record: truncated '" + line + "'");
        e.fit_error = std::strtod(err.c_str(), nullptr);
        return e;
    }
};

/// Admissible = fit_error <= 1.05 best + 1e-8; then lowest complexity, then smaller error, then list order.
inline SymbolicExpression select(const std::vector<FitResult>& candidates) {
    if (candidates.empty()) throw Error("select: no candidates");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) best = std::min(best, c.fit_error);
    const double bound = best * (1.0 + kSelectRelTol) + kSelectAbsTol;
    const FitResult* pick = nullptr;
    int pick_complexity = 0;
    for (const auto& c : candidates) {
        if (!(c.fit_error <= bound) && std::isfinite(best)) continue;
        const int k = complexity(c.family, c.params);
        if (!pick || k < pick_complexity || (k == pick_complexity && c.fit_error < pick->fit_error)) {
            pick = &c;
            pick_complexity = k;
        }
    }
    return SymbolicExpression::from(*pick);
}

struct CurveSamples {
    Eigen::ArrayXd u;
    Eigen::ArrayXd D;
    Eigen::ArrayXd R;
};

/// L uniformly spaced samples on [lo, hi] including both endpoints.
inline CurveSamples sample_closure(const ClosurePair& closure, double lo, double hi, int L = 256) {
    if (!(hi >= lo)) throw Error("sample_closure: empty support");
    if (L < 2) throw Error("sample_closure: need at least two samples");
    CurveSamples s;
    s.u.resize(L);
    for (int l = 0; l < L; ++l) s.u[l] = lo + (hi - lo) * l / (L - 1);
    s.u[L - 1] = hi;
    s.D = closure.D_of(s.u);
    s.R = closure.R_of(s.u);
    return s;
}

struct SymbolicPair {
    SymbolicExpression D;
    SymbolicExpression R;
    std::vector<FitResult> D_candidates;
    std::vector<FitResult> R_candidates;

    ClosurePair to_closure() const {
        return {[d = D](double u) { return d(u); }, [r = R](double u) { return r(u); }, Provenance::symbolic,
                [d = D](std::span<const double> u, std::span<double> out) {
                    const Eigen::ArrayXd x = Eigen::Map<const Eigen::ArrayXd>(u.data(), static_cast<Eigen::Index>(u.size()));
                    Eigen::Map<Eigen::ArrayXd>(out.data(), static_cast<Eigen::Index>(out.size())) = d(x);
                },
                [r = R](std::span<const double> u, std::span<double> out) {
                    const Eigen::ArrayXd x = Eigen::Map<const Eigen::ArrayXd>(u.data(), static_cast<Eigen::Index>(u.size()));
                    Eigen::Map<Eigen::ArrayXd>(out.data(), static_cast<Eigen::Index>(out.size())) = r(x);
                }};
    }

    void write(std::ostream& os) const {
        os << "D ";
        D.write(os);
        os << "R ";
        R.write(os);
    }
};

/// Sample, fit every family, select, independently for D and R.
inline SymbolicPair compress(const ClosurePair& surrogate, double lo, double hi, const CandidateLibrary& library = {}, int L = 256,
                             std::uint64_t seed = 0) {
    const CurveSamples s = sample_closure(surrogate, lo, hi, L);
    SymbolicPair out;
    for (Family f : library.diffusion) out.D_candidates.push_back(fit_family(s.u, s.D, f, seed));
    for (Family f : library.reaction) out.R_candidates.push_back(fit_family(s.u, s.R, f, seed));
    out.D = select(out.D_candidates);
    out.R = select(out.R_candidates);
    return out;
}

}  // namespace closurelab
