#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "closurelab/error.hpp"

namespace closurelab::ad {

class Tape;

/// Handle to an array-valued node on a tape. Size-1 nodes act as scalars and broadcast.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Eigen::ArrayXd& value() const;
    Eigen::Index size() const { return value().size(); }
    double scalar() const { return value()[0]; }
};

/// Reverse-mode tape over Eigen arrays. Nodes are appended in evaluation order; backward() walks them in
/// reverse, calling each node's pullback with its accumulated cotangent.
class Tape {
public:
    using Pullback = std::function<void(Tape&, const Eigen::ArrayXd&)>;

    Var constant(Eigen::ArrayXd v) { return push(std::move(v), false, {}); }
    Var variable(Eigen::ArrayXd v) { return push(std::move(v), true, {}); }
    Var constant(double v) { return constant(Eigen::ArrayXd::Constant(1, v)); }

    Var push(Eigen::ArrayXd value, bool needs_grad, Pullback pullback) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        if (needs_grad) n.pullback = std::move(pullback);
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    const Eigen::ArrayXd& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }
    bool needs_grad(Var v) const { return needs_grad(v.id); }

    void accumulate(int id, const Eigen::ArrayXd& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    void accumulate_segment(int id, Eigen::Index offset, const Eigen::ArrayXd& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) n.grad = Eigen::ArrayXd::Zero(n.value.size());
        n.grad.segment(offset, g.size()) += g;
    }

    /// Seeds d(out)/d(out) = 1 for a size-1 node and propagates to all leaves.
    void backward(Var out) {
        if (out.tape != this) throw Error("Tape::backward: variable belongs to another tape");
        if (value(out.id).size() != 1) throw Error("Tape::backward: output must be scalar");
        for (auto& n : nodes_) n.grad.resize(0);
        if (!nodes_[static_cast<std::size_t>(out.id)].needs_grad) return;
        nodes_[static_cast<std::size_t>(out.id)].grad = Eigen::ArrayXd::Ones(1);
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.pullback || n.grad.size() == 0) continue;
            const Eigen::ArrayXd g = n.grad;
            n.pullback(*this, g);
        }
    }

    /// Cotangent of a node after backward(); zeros if the output did not depend on it.
    Eigen::ArrayXd gradient(Var v) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
        if (n.grad.size() == 0) return Eigen::ArrayXd::Zero(n.value.size());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Eigen::ArrayXd value;
        Eigen::ArrayXd grad;
        bool needs_grad = false;
        Pullback pullback;
    };
    std::vector<Node> nodes_;
};

inline const Eigen::ArrayXd& Var::value() const { return tape->value(id); }

namespace detail {
inline void check_pair(const Var& a, const Var& b, const char* op) {
    if (a.tape != b.tape) throw Error(std::string(op) + ": operands on different tapes");
    const auto na = a.size(), nb = b.size();
    if (na != nb && na != 1 && nb != 1) throw Error(std::string(op) + ": size mismatch");
}
inline Eigen::ArrayXd expand(const Eigen::ArrayXd& v, Eigen::Index n) {
    return v.size() == n ? v : Eigen::ArrayXd::Constant(n, v[0]);
}
/// Reduces a broadcast cotangent back to the operand's shape.
inline Eigen::ArrayXd reduce_to(const Eigen::ArrayXd& g, Eigen::Index n) {
    if (g.size() == n) return g;
    return Eigen::ArrayXd::Constant(1, g.sum());
}
inline bool any_grad(const Var& a) { return a.tape->needs_grad(a); }
inline bool any_grad(const Var& a, const Var& b) { return a.tape->needs_grad(a) || b.tape->needs_grad(b); }
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
    detail::check_pair(a, b, "add");
    const auto n = std::max(a.size(), b.size());
    Eigen::ArrayXd v = detail::expand(a.value(), n) + detail::expand(b.value(), n);
    const int ia = a.id, ib = b.id;
    const auto na = a.size(), nb = b.size();
    return a.tape->push(std::move(v), detail::any_grad(a, b), [=](Tape& t, const Eigen::ArrayXd& g) {
        t.accumulate(ia, detail::reduce_to(g, na));
        t.accumulate(ib, detail::reduce_to(g, nb));
    });
}

inline Var operator-(const Var& a, const Var& b) {
    detail::check_pair(a, b, "sub");
    const auto n = std::max(a.size(), b.size());
    Eigen::ArrayXd v = detail::expand(a.value(), n) - detail::expand(b.value(), n);
    const int ia = a.id, ib = b.id;
    const auto na = a.size(), nb = b.size();
    return a.tape->push(std::move(v), detail::any_grad(a, b), [=](Tape& t, const Eigen::ArrayXd& g) {
        t.accumulate(ia, detail::reduce_to(g, na));
        t.accumulate(ib, detail::reduce_to(-g, nb));
    });
}

inline Var operator*(const Var& a, const Var& b) {
    detail::check_pair(a, b, "mul");
    const auto n = std::max(a.size(), b.size());
    Eigen::ArrayXd av = detail::expand(a.value(), n), bv = detail::expand(b.value(), n);
    Eigen::ArrayXd v = av * bv;
    const int ia = a.id, ib = b.id;
    const auto na = a.size(), nb = b.size();
    const bool ga = a.tape->needs_grad(a), gb = b.tape->needs_grad(b);
    return a.tape->push(std::move(v), ga || gb, [=, av = std::move(av), bv = std::move(bv)](Tape& t, const Eigen::ArrayXd& g) {
        if (ga) t.accumulate(ia, detail::reduce_to(g * bv, na));
        if (gb) t.accumulate(ib, detail::reduce_to(g * av, nb));
    });
}

inline Var operator/(const Var& a, const Var& b) {
    detail::check_pair(a, b, "div");
    const auto n = std::max(a.size(), b.size());
    Eigen::ArrayXd av = detail::expand(a.value(), n), bv = detail::expand(b.value(), n);
    Eigen::ArrayXd v = av / bv;
    const int ia = a.id, ib = b.id;
    const auto na = a.size(), nb = b.size();
    const bool ga = a.tape->needs_grad(a), gb = b.tape->needs_grad(b);
    return a.tape->push(v, ga || gb, [=, bv = std::move(bv)](Tape& t, const Eigen::ArrayXd& g) {
        if (ga) t.accumulate(ia, detail::reduce_to(g / bv, na));
        if (gb) t.accumulate(ib, detail::reduce_to(-g * v / bv, nb));
    });
}

inline Var operator*(double c, const Var& a) {
    const int ia = a.id;
    return a.tape->push(c * a.value(), detail::any_grad(a), [=](Tape& t, const Eigen::ArrayXd& g) { t.accumulate(ia, c * g); });
}
inline Var operator*(const Var& a, double c) { return c * a; }
inline Var operator-(const Var& a) { return -1.0 * a; }

inline Var operator+(const Var& a, double c) {
    const int ia = a.id;
    return a.tape->push(a.value() + c, detail::any_grad(a), [=](Tape& t, const Eigen::ArrayXd& g) { t.accumulate(ia, g); });
}
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a + (-c); }
inline Var operator-(double c, const Var& a) { return (-1.0 * a) + c; }

/// Elementwise map with a known derivative, evaluated from the input and output values.
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
    Eigen::ArrayXd x = a.value();
    Eigen::ArrayXd y = f(x);
    const int ia = a.id;
    const bool g = detail::any_grad(a);
    if (!g) return a.tape->push(std::move(y), false, {});
    Eigen::ArrayXd d = df(x, y);
    return a.tape->push(std::move(y), true, [=, d = std::move(d)](Tape& t, const Eigen::ArrayXd& gy) { t.accumulate(ia, gy * d); });
}

inline Var square(const Var& a) {
    return unary(a, [](const Eigen::ArrayXd& x) { return Eigen::ArrayXd(x.square()); },
                 [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) { return Eigen::ArrayXd(2.0 * x); });
}

/// tanh through the vectorised exponential, 1 - 2 / (e^{2x} + 1); accurate to a few ulp in absolute terms.
template <class Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
    return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

inline Var tanh(const Var& a) {
    return unary(a, [](const Eigen::ArrayXd& x) { return Eigen::ArrayXd(fast_tanh(x)); },
                 [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return Eigen::ArrayXd(1.0 - y.square()); });
}

inline Var exp(const Var& a) {
    return unary(a, [](const Eigen::ArrayXd& x) { return Eigen::ArrayXd(x.exp()); },
                 [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return y; });
}

inline Var log(const Var& a) {
    return unary(a, [](const Eigen::ArrayXd& x) { return Eigen::ArrayXd(x.log()); },
                 [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) { return Eigen::ArrayXd(x.inverse()); });
}

inline Var pow(const Var& a, double p) {
    return unary(a, [p](const Eigen::ArrayXd& x) { return Eigen::ArrayXd(x.pow(p)); },
                 [p](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) { return Eigen::ArrayXd(p * x.pow(p - 1.0)); });
}

/// Numerically stable log(1 + e^x).
inline Eigen::ArrayXd softplus_values(const Eigen::ArrayXd& x) {
    return x.max(0.0) + (-x.abs()).exp().log1p();
}
inline Eigen::ArrayXd sigmoid_values(const Eigen::ArrayXd& x) {
    return (x >= 0.0).select((1.0 + (-x).exp()).inverse(), x.exp() / (1.0 + x.exp()));
}

inline Var softplus(const Var& a) {
    return unary(a, softplus_values, [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) { return sigmoid_values(x); });
}

inline Var sum(const Var& a) {
    const int ia = a.id;
    const auto n = a.size();
    return a.tape->push(Eigen::ArrayXd::Constant(1, a.value().sum()), detail::any_grad(a),
                        [=](Tape& t, const Eigen::ArrayXd& g) { t.accumulate(ia, Eigen::ArrayXd::Constant(n, g[0])); });
}

inline Var mean(const Var& a) {
    if (a.size() == 0) throw Error("mean: empty array");
    return (1.0 / static_cast<double>(a.size())) * sum(a);
}

/// Slice [offset, offset + len).
inline Var segment(const Var& a, Eigen::Index offset, Eigen::Index len) {
    if (offset < 0 || len < 0 || offset + len > a.size()) throw Error("segment: out of range");
    const int ia = a.id;
    return a.tape->push(a.value().segment(offset, len), detail::any_grad(a),
                        [=](Tape& t, const Eigen::ArrayXd& g) { t.accumulate_segment(ia, offset, g); });
}

/// Row-wise periodic shift of a row-major (rows x cols) array: out[r, i] = a[r, (i + offset) mod cols].
inline Var roll_rows(const Var& a, Eigen::Index rows, Eigen::Index cols, Eigen::Index offset) {
    if (rows * cols != a.size()) throw Error("roll_rows: shape mismatch");
    auto shift = [rows, cols](const Eigen::ArrayXd& v, Eigen::Index off) {
        Eigen::ArrayXd out(v.size());
        const Eigen::Index o = ((off % cols) + cols) % cols;
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double* src = v.data() + r * cols;
            double* dst = out.data() + r * cols;
            for (Eigen::Index i = 0; i < cols - o; ++i) dst[i] = src[i + o];
            for (Eigen::Index i = cols - o; i < cols; ++i) dst[i] = src[i + o - cols];
        }
        return out;
    };
    const int ia = a.id;
    return a.tape->push(shift(a.value(), offset), detail::any_grad(a),
                        [=](Tape& t, const Eigen::ArrayXd& g) { t.accumulate(ia, shift(g, -offset)); });
}

/// Row-major (rows x cols) array times a constant (cols x k) matrix, giving a row-major (rows x k) array.
inline Var matmul(const Var& a, Eigen::Index rows, const Eigen::MatrixXd& M) {
    const Eigen::Index cols = M.rows(), k = M.cols();
    if (rows * cols != a.size()) throw Error("matmul: shape mismatch");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::ArrayXd out(rows * k);
    Eigen::Map<RowMat>(out.data(), rows, k).noalias() = Eigen::Map<const RowMat>(a.value().data(), rows, cols) * M;
    const int ia = a.id;
    return a.tape->push(std::move(out), detail::any_grad(a), [=, Mt = Eigen::MatrixXd(M.transpose())](Tape& t, const Eigen::ArrayXd& g) {
        Eigen::ArrayXd ga(rows * cols);
        Eigen::Map<RowMat>(ga.data(), rows, cols).noalias() = Eigen::Map<const RowMat>(g.data(), rows, k) * Mt;
        t.accumulate(ia, ga);
    });
}

}  // namespace closurelab::ad
