#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "closurelab/autodiff.hpp"
#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/grid.hpp"
#include "closurelab/pde.hpp"
#include "closurelab/rng.hpp"
#include "closurelab/weak_form.hpp"

namespace closurelab {

inline constexpr double kDiffusionFloor = 1e-4;
inline constexpr double kNetInitScale = 1e-2;
/// Initial diffusivity level of the positive branch, D̂ ≈ 0.035 before training.
inline constexpr double kDiffusionInitLevel = 0.035;
inline constexpr int kRolloutStride = 25;
inline constexpr int kRegularizationPoints = 64;

/// One scalar branch: polynomial backbone plus a tanh MLP on the raw state.
/// Flat layout: poly[deg+1] | W1[width] b1[width] | (W_l[width*width] b_l[width]) x (depth-1) | w_out[width] b_out[1].
struct BranchLayout {
    int degree = 0;
    int width = 64;
    int depth = 2;
    Eigen::Index offset = 0;

    Eigen::Index poly_size() const { return degree + 1; }
    Eigen::Index size() const {
        return poly_size() + 2 * width + static_cast<Eigen::Index>(depth - 1) * (width * width + width) + width + 1;
    }
    Eigen::Index poly_at() const { return offset; }
    Eigen::Index w1_at() const { return offset + poly_size(); }
    Eigen::Index b1_at() const { return w1_at() + width; }
    Eigen::Index hidden_w_at(int l) const { return b1_at() + width + static_cast<Eigen::Index>(l - 1) * (width * width + width); }
    Eigen::Index hidden_b_at(int l) const { return hidden_w_at(l) + width * width; }
    Eigen::Index out_w_at() const { return hidden_w_at(depth); }
    Eigen::Index out_b_at() const { return out_w_at() + width; }

    friend bool operator==(const BranchLayout&, const BranchLayout&) = default;
};

struct ParamBlock {
    std::string name;
    Eigen::Index offset;
    Eigen::Index rows;
    Eigen::Index cols;
};

struct SurrogateLayout {
    BranchLayout D;
    BranchLayout R;

    static SurrogateLayout make(int degD = 2, int degR = 3, int width = 64, int depth = 2) {
        if (degD < 0 || degR < 0 || width < 1 || depth < 1) throw Error("SurrogateLayout: invalid shape");
        SurrogateLayout l;
        l.D = {degD, width, depth, 0};
        l.R = {degR, width, depth, l.D.size()};
        return l;
    }
    Eigen::Index size() const { return D.size() + R.size(); }

    std::vector<ParamBlock> blocks() const {
        std::vector<ParamBlock> out;
        auto add = [&out](const std::string& b, const BranchLayout& L) {
            out.push_back({b + ".poly", L.poly_at(), L.poly_size(), 1});
            out.push_back({b + ".W1", L.w1_at(), L.width, 1});
            out.push_back({b + ".b1", L.b1_at(), L.width, 1});
            for (int l = 1; l < L.depth; ++l) {
                out.push_back({b + ".W" + std::to_string(l + 1), L.hidden_w_at(l), L.width, L.width});
                out.push_back({b + ".b" + std::to_string(l + 1), L.hidden_b_at(l), L.width, 1});
            }
            out.push_back({b + ".w_out", L.out_w_at(), L.width, 1});
            out.push_back({b + ".b_out", L.out_b_at(), 1, 1});
        };
        add("D", D);
        add("R", R);
        return out;
    }

    friend bool operator==(const SurrogateLayout&, const SurrogateLayout&) = default;
};

struct SurrogateParams {
    SurrogateLayout layout = SurrogateLayout::make();
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(SurrogateLayout::make().size());

    static SurrogateParams zeros(const SurrogateLayout& layout) { return {layout, Eigen::VectorXd::Zero(layout.size())}; }

    Eigen::Map<Eigen::VectorXd> poly_D() { return {theta.data() + layout.D.poly_at(), layout.D.poly_size()}; }
    Eigen::Map<Eigen::VectorXd> poly_R() { return {theta.data() + layout.R.poly_at(), layout.R.poly_size()}; }

    /// Checkpoint: header, named blocks with shapes, then one value per line at round-trip precision.
    void write(std::ostream& os) const {
        os << "closurelab-surrogate 1\n";
        os << "shape degD " << layout.D.degree << " degR " << layout.R.degree << " width " << layout.D.width << " depth " << layout.D.depth
           << " size " << layout.size() << '\n';
        for (const auto& b : layout.blocks()) os << "block " << b.name << ' ' << b.offset << ' ' << b.rows << ' ' << b.cols << '\n';
        os << "values\n";
        char buf[40];
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g\n", theta[i]);
            os << buf;
        }
    }

    static SurrogateParams read(std::istream& is) {
        std::string line, word;
        if (!std::getline(is, line) || line != "closurelab-surrogate 1") throw SchemaError("surrogate checkpoint: bad header");
        if (!std::getline(is, line)) throw SchemaError("surrogate checkpoint: missing shape line");
        std::istringstream shape(line);
        int degD = 0, degR = 0, width = 0, depth = 0;
        Eigen::Index size = 0;
        std::string k1, k2, k3, k4, k5;
        shape >> word >> k1 >> degD >> k2 >> degR >> k3 >> width >> k4 >> depth >> k5 >> size;
        if (!shape || word != "shape" || k1 != "degD" || k2 != "degR" || k3 != "width" || k4 != "depth" || k5 != "size")
            throw SchemaError("surrogate checkpoint: malformed shape line");
        SurrogateParams p = zeros(SurrogateLayout::make(degD, degR, width, depth));
        if (p.layout.size() != size) throw SchemaError("surrogate checkpoint: size does not match shape");
        while (std::getline(is, line) && line != "values") {
            if (line.rfind("block ", 0) != 0) throw SchemaError("surrogate checkpoint: unexpected line '" + line + "'");
        }
        if (line != "values") throw SchemaError("surrogate checkpoint: missing values section");
        for (Eigen::Index i = 0; i < size; ++i) {
            if (!std::getline(is, line)) throw SchemaError("surrogate checkpoint: truncated values");
            p.theta[i] = std::strtod(line.c_str(), nullptr);
        }
        return p;
    }
};

namespace detail {
inline constexpr Eigen::Index kBranchChunk = 256;

/// Hidden activations of one chunk of states (width x n per layer) and the pre-map output z.
struct ChunkState {
    std::vector<Eigen::MatrixXd> hidden;
    Eigen::MatrixXd scratch;
    Eigen::ArrayXd z;
};

inline void forward_chunk(const BranchLayout& L, const double* theta, const double* u, Eigen::Index n, ChunkState& s) {
    const int w = L.width;
    Eigen::Map<const Eigen::ArrayXd> x(u, n);
    Eigen::Map<const Eigen::VectorXd> W1(theta + L.w1_at(), w), b1(theta + L.b1_at(), w);
    s.hidden.resize(static_cast<std::size_t>(L.depth));
    s.scratch.noalias() = W1 * x.matrix().transpose();
    s.scratch.colwise() += b1;
    s.hidden[0] = ad::fast_tanh(s.scratch.array()).matrix();
    for (int l = 1; l < L.depth; ++l) {
        Eigen::Map<const Eigen::MatrixXd> Wl(theta + L.hidden_w_at(l), w, w);
        Eigen::Map<const Eigen::VectorXd> bl(theta + L.hidden_b_at(l), w);
        s.scratch.noalias() = Wl * s.hidden[static_cast<std::size_t>(l - 1)];
        s.scratch.colwise() += bl;
        s.hidden[static_cast<std::size_t>(l)] = ad::fast_tanh(s.scratch.array()).matrix();
    }
    Eigen::Map<const Eigen::VectorXd> wo(theta + L.out_w_at(), w);
    s.z.resize(n);
    s.z.matrix().noalias() = s.hidden.back().transpose() * wo;
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(n);
    for (Eigen::Index i = L.poly_size() - 1; i >= 0; --i) acc = acc * x + theta[L.poly_at() + i];
    s.z += acc + theta[L.out_b_at()];
}
}  // namespace detail

/// z = poly(u) + net(u); returns eps + softplus(z) when positive, z otherwise.
inline Eigen::ArrayXd branch_forward(const BranchLayout& L, const double* theta, const Eigen::ArrayXd& u, bool positive) {
    const Eigen::Index N = u.size();
    Eigen::ArrayXd out(N);
    detail::ChunkState s;
    for (Eigen::Index at = 0; at < N; at += detail::kBranchChunk) {
        const Eigen::Index n = std::min(detail::kBranchChunk, N - at);
        detail::forward_chunk(L, theta, u.data() + at, n, s);
        out.segment(at, n) = positive ? Eigen::ArrayXd(kDiffusionFloor + ad::softplus_values(s.z)) : s.z;
    }
    return out;
}

/// Pullback of branch_forward, recomputing activations chunk by chunk. Accumulates d/dtheta into dtheta
/// (branch-local indexing) and writes d/du when du is given.
inline void branch_backward(const BranchLayout& L, const double* theta, const Eigen::ArrayXd& u, bool positive, const Eigen::ArrayXd& g,
                            Eigen::ArrayXd& dtheta, Eigen::ArrayXd* du) {
    const int w = L.width;
    const Eigen::Index base = L.offset;
    const Eigen::Index N = u.size();
    Eigen::Map<const Eigen::VectorXd> W1(theta + L.w1_at(), w);
    Eigen::Map<const Eigen::VectorXd> wo(theta + L.out_w_at(), w);
    if (du) du->resize(N);
    detail::ChunkState s;
    Eigen::MatrixXd dA, dH;
    for (Eigen::Index at = 0; at < N; at += detail::kBranchChunk) {
        const Eigen::Index n = std::min(detail::kBranchChunk, N - at);
        detail::forward_chunk(L, theta, u.data() + at, n, s);
        const Eigen::Map<const Eigen::ArrayXd> x(u.data() + at, n);
        const Eigen::ArrayXd dz = positive ? Eigen::ArrayXd(g.segment(at, n) * ad::sigmoid_values(s.z)) : Eigen::ArrayXd(g.segment(at, n));
        Eigen::ArrayXd power = Eigen::ArrayXd::Ones(n);
        for (Eigen::Index i = 0; i < L.poly_size(); ++i) {
            dtheta[L.poly_at() - base + i] += (dz * power).sum();
            power *= x;
        }
        dtheta[L.out_b_at() - base] += dz.sum();
        const Eigen::MatrixXd& HL = s.hidden.back();
        dtheta.segment(L.out_w_at() - base, w) += (HL * dz.matrix()).array();
        dA = ((wo * dz.matrix().transpose()).array() * (1.0 - HL.array().square())).matrix();
        for (int l = L.depth - 1; l >= 1; --l) {
            const Eigen::MatrixXd& Hprev = s.hidden[static_cast<std::size_t>(l - 1)];
            Eigen::Map<Eigen::MatrixXd> dW(dtheta.data() + (L.hidden_w_at(l) - base), w, w);
            dW.noalias() += dA * Hprev.transpose();
            dtheta.segment(L.hidden_b_at(l) - base, w) += dA.rowwise().sum().array();
            Eigen::Map<const Eigen::MatrixXd> Wl(theta + L.hidden_w_at(l), w, w);
            dH.noalias() = Wl.transpose() * dA;
            dA = (dH.array() * (1.0 - Hprev.array().square())).matrix();
        }
        dtheta.segment(L.w1_at() - base, w) += (dA * x.matrix()).array();
        dtheta.segment(L.b1_at() - base, w) += dA.rowwise().sum().array();
        if (du) {
            Eigen::ArrayXd dpoly = Eigen::ArrayXd::Zero(n);
            for (Eigen::Index i = L.poly_size() - 1; i >= 1; --i) dpoly = dpoly * x + static_cast<double>(i) * theta[L.poly_at() + i];
            du->segment(at, n) = (dA.transpose() * W1).array() + dpoly * dz;
        }
    }
}

/// Tape primitive: batched branch evaluation whose pullback recomputes the hidden activations.
inline ad::Var branch(const ad::Var& theta, const ad::Var& u, const BranchLayout& L, bool positive) {
    Eigen::ArrayXd y = branch_forward(L, theta.value().data(), u.value(), positive);
    ad::Tape& tape = *theta.tape;
    const bool gt = tape.needs_grad(theta), gu = tape.needs_grad(u);
    const int it = theta.id, iu = u.id;
    return tape.push(std::move(y), gt || gu, [=](ad::Tape& t, const Eigen::ArrayXd& g) {
        Eigen::ArrayXd dtheta = Eigen::ArrayXd::Zero(L.size());
        Eigen::ArrayXd du;
        branch_backward(L, t.value(it).data(), t.value(iu), positive, g, dtheta, gu ? &du : nullptr);
        if (gt) t.accumulate_segment(it, L.offset, dtheta);
        if (gu) t.accumulate(iu, du);
    });
}

inline Eigen::ArrayXd eval_D(const SurrogateParams& p, const Eigen::ArrayXd& u) { return branch_forward(p.layout.D, p.theta.data(), u, true); }
inline Eigen::ArrayXd eval_R(const SurrogateParams& p, const Eigen::ArrayXd& u) { return branch_forward(p.layout.R, p.theta.data(), u, false); }
inline double eval_D(const SurrogateParams& p, double u) { return eval_D(p, Eigen::ArrayXd::Constant(1, u))[0]; }
inline double eval_R(const SurrogateParams& p, double u) { return eval_R(p, Eigen::ArrayXd::Constant(1, u))[0]; }

inline ClosurePair to_closure(const SurrogateParams& params) {
    auto p = std::make_shared<const SurrogateParams>(params);
    auto batch = [p](bool positive) {
        return [p, positive](std::span<const double> u, std::span<double> out) {
            const Eigen::ArrayXd x = Eigen::Map<const Eigen::ArrayXd>(u.data(), static_cast<Eigen::Index>(u.size()));
            const BranchLayout& L = positive ? p->layout.D : p->layout.R;
            Eigen::Map<Eigen::ArrayXd>(out.data(), static_cast<Eigen::Index>(out.size())) = branch_forward(L, p->theta.data(), x, positive);
        };
    };
    return {[p](double u) { return eval_D(*p, u); }, [p](double u) { return eval_R(*p, u); }, Provenance::neural, batch(true), batch(false)};
}

struct LossWeights {
    double alpha = 0.1;      // rollout
    double beta = 1.0;       // mass
    double gamma = 1.0;      // strong
    double eta = 1.0;        // anchor
    double lambda_reg = 1e-4;

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0 || eta < 0 || lambda_reg < 0) throw Error("LossWeights: weights must be nonnegative");
    }
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

enum class ObjectiveVariant { weak_only, no_strong, full };

inline std::string_view to_string(ObjectiveVariant v) {
    switch (v) {
        case ObjectiveVariant::weak_only: return "weak_only";
        case ObjectiveVariant::no_strong: return "no_strong";
        case ObjectiveVariant::full: return "full";
    }
    return "?";
}

inline ObjectiveVariant parse_objective_variant(std::string_view s) {
    if (s == "weak_only") return ObjectiveVariant::weak_only;
    if (s == "no_strong") return ObjectiveVariant::no_strong;
    if (s == "full") return ObjectiveVariant::full;
    throw Error("unknown objective variant '" + std::string(s) + "'");
}

inline LossWeights objective_variant(ObjectiveVariant v) {
    switch (v) {
        case ObjectiveVariant::weak_only: return {0.0, 0.0, 0.0, 0.0, 0.0};
        case ObjectiveVariant::no_strong: return {0.1, 1.0, 0.0, 1.0, 1e-4};
        case ObjectiveVariant::full: return {};
    }
    throw Error("unknown objective variant");
}
inline LossWeights objective_variant(std::string_view tag) { return objective_variant(parse_objective_variant(tag)); }

/// Observed data flattened for loss evaluation. Arrays marked rows x n_x are row-major over interior snapshots
/// of all trajectories, in trajectory order.
struct TrainingSet {
    int n_x = 0;
    double dx = 0.0;
    double dt_save = 0.0;
    int substeps = 1;
    Eigen::Index rows = 0;
    Eigen::ArrayXd u, ut, ux;       // rows x n_x
    Eigen::ArrayXd face_u;          // (u_i + u_{i+1}) / 2
    Eigen::ArrayXd face_grad;       // (u_{i+1} - u_i) / dx
    Eigen::Index roll_rows = 0;
    Eigen::ArrayXd roll_start, roll_target;  // roll_rows x n_x
    double u_min = 0.0, u_max = 0.0;
    double u_anchor = 0.0;          // lower state boundary, R(0) = 0
    Eigen::ArrayXd reg_grid;
    Eigen::MatrixXd phi_t, dphi_t;  // n_x x K
    Eigen::MatrixXd ones;            // n_x x 1
};

inline TrainingSet make_training_set(const std::vector<Trajectory>& data, const TestFunctionFamily& tests, double solver_dt,
                                     int rollout_stride = kRolloutStride) {
    if (data.empty()) throw Error("make_training_set: no trajectories");
    if (!(solver_dt > 0.0)) throw Error("make_training_set: solver dt must be positive");
    if (rollout_stride < 1) throw Error("make_training_set: rollout stride must be positive");
    TrainingSet s;
    s.n_x = data.front().grid.n_x;
    s.dx = data.front().grid.dx();
    s.dt_save = data.front().dt_save;
    s.substeps = std::max(1, static_cast<int>(std::lround(s.dt_save / solver_dt)));
    if (tests.grid.n_x != s.n_x) throw Error("make_training_set: test functions built on a different grid");
    s.u_min = data.front().min_state();
    s.u_max = data.front().max_state();
    for (const auto& t : data) {
        if (t.grid.n_x != s.n_x || t.dt_save != s.dt_save) throw Error("make_training_set: trajectories must share grid and save interval");
        if (t.n_snapshots() < 3) throw Error("make_training_set: need at least 3 snapshots per trajectory");
        s.rows += t.n_snapshots() - 2;
        s.u_min = std::min(s.u_min, t.min_state());
        s.u_max = std::max(s.u_max, t.max_state());
        for (int n = 1; n + 1 < t.n_snapshots(); n += rollout_stride) ++s.roll_rows;
    }
    const Eigen::Index nx = s.n_x;
    s.u.resize(s.rows * nx);
    s.ut.resize(s.rows * nx);
    s.ux.resize(s.rows * nx);
    s.face_u.resize(s.rows * nx);
    s.face_grad.resize(s.rows * nx);
    s.roll_start.resize(s.roll_rows * nx);
    s.roll_target.resize(s.roll_rows * nx);
    Eigen::Index at = 0, rat = 0;
    for (const auto& t : data) {
        for (int n = 1; n + 1 < t.n_snapshots(); ++n) {
            const State u = t.snapshot(n);
            const State up = roll(u, 1);
            s.u.segment(at, nx) = u;
            s.ut.segment(at, nx) = (t.snapshot(n + 1) - t.snapshot(n - 1)) / (2.0 * s.dt_save);
            s.ux.segment(at, nx) = central_dx(u, s.dx);
            s.face_u.segment(at, nx) = 0.5 * (u + up);
            s.face_grad.segment(at, nx) = (up - u) / s.dx;
            at += nx;
            if ((n - 1) % rollout_stride == 0) {
                s.roll_start.segment(rat, nx) = u;
                s.roll_target.segment(rat, nx) = t.snapshot(n + 1);
                rat += nx;
            }
        }
    }
    s.reg_grid.resize(kRegularizationPoints);
    for (int i = 0; i < kRegularizationPoints; ++i) s.reg_grid[i] = s.u_min + (s.u_max - s.u_min) * i / (kRegularizationPoints - 1);
    s.phi_t = tests.phi.transpose();
    s.dphi_t = tests.dphi.transpose();
    s.ones = Eigen::MatrixXd::Ones(nx, 1);
    return s;
}

struct LossTerms {
    double total = 0.0, weak = 0.0, roll = 0.0, mass = 0.0, strong = 0.0, anchor = 0.0, reg = 0.0;
};

struct LossEvaluation {
    LossTerms terms;
    Eigen::VectorXd gradient;
};

namespace detail {
/// Surrogate right-hand side on a batch of states laid out row-major (rows x n_x), matching pde::rhs.
inline ad::Var surrogate_rhs(const ad::Var& theta, const ad::Var& u, const SurrogateLayout& L, Eigen::Index rows, Eigen::Index nx, double dx) {
    const ad::Var up = ad::roll_rows(u, rows, nx, 1);
    const ad::Var face_D = branch(theta, 0.5 * (u + up), L.D, true);
    const ad::Var flux = face_D * (up - u) * (1.0 / dx);
    const ad::Var div = (flux - ad::roll_rows(flux, rows, nx, -1)) * (1.0 / dx);
    return div + branch(theta, u, L.R, false);
}

inline ad::Var second_difference_sq_mean(const ad::Var& v) {
    const Eigen::Index n = v.size();
    const ad::Var d2 = ad::segment(v, 2, n - 2) - 2.0 * ad::segment(v, 1, n - 2) + ad::segment(v, 0, n - 2);
    return ad::mean(ad::square(d2));
}

inline void require_finite_term(double v, const char* name) {
    if (!std::isfinite(v)) throw TrainingError(std::string("non-finite loss term '") + name + "'");
}
}  // namespace detail

/// L = L_weak + α L_roll + β L_mass + γ L_strong + η L_anchor + λ L_reg. The rollout term is only
/// evaluated when α > 0 (reported as 0 otherwise); all other terms are always reported.
inline LossEvaluation hybrid_loss(const SurrogateParams& params, const TrainingSet& data, const LossWeights& w, bool with_gradient = true) {
    w.validate();
    if (data.rows == 0) throw Error("hybrid_loss: empty training set");
    ad::Tape tape;
    const ad::Var theta = with_gradient ? tape.variable(params.theta.array()) : tape.constant(params.theta.array());
    const SurrogateLayout& L = params.layout;
    const Eigen::Index nx = data.n_x;

    const ad::Var U = tape.constant(data.u);
    const ad::Var Dv = branch(theta, U, L.D, true);
    const ad::Var Rv = branch(theta, U, L.R, false);
    const ad::Var source = tape.constant(data.ut) - Rv;
    const ad::Var r = data.dx * (ad::matmul(source, data.rows, data.phi_t) + ad::matmul(Dv * tape.constant(data.ux), data.rows, data.dphi_t));
    const ad::Var Lweak = ad::mean(ad::square(r));

    const ad::Var mass = data.dx * ad::matmul(source, data.rows, data.ones);
    const ad::Var Lmass = ad::mean(ad::square(mass));

    const ad::Var face_D = branch(theta, tape.constant(data.face_u), L.D, true);
    const ad::Var flux = face_D * tape.constant(data.face_grad);
    const ad::Var div = (flux - ad::roll_rows(flux, data.rows, nx, -1)) * (1.0 / data.dx);
    const ad::Var Lstrong = ad::mean(ad::square(source - div));

    const ad::Var Lanchor = ad::square(branch(theta, tape.constant(data.u_anchor), L.R, false));

    const ad::Var grid = tape.constant(data.reg_grid);
    const ad::Var Lreg =
        detail::second_difference_sq_mean(branch(theta, grid, L.D, true)) + detail::second_difference_sq_mean(branch(theta, grid, L.R, false));

    ad::Var total = Lweak;
    LossTerms terms;
    if (w.alpha > 0.0 && data.roll_rows > 0) {
        const double h = data.dt_save / data.substeps;
        ad::Var u = tape.constant(data.roll_start);
        const Eigen::Index rr = data.roll_rows;
        for (int s = 0; s < data.substeps; ++s) {
            const ad::Var k1 = detail::surrogate_rhs(theta, u, L, rr, nx, data.dx);
            const ad::Var k2 = detail::surrogate_rhs(theta, u + (0.5 * h) * k1, L, rr, nx, data.dx);
            const ad::Var k3 = detail::surrogate_rhs(theta, u + (0.5 * h) * k2, L, rr, nx, data.dx);
            const ad::Var k4 = detail::surrogate_rhs(theta, u + h * k3, L, rr, nx, data.dx);
            u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        const ad::Var Lroll = ad::mean(ad::square(u - tape.constant(data.roll_target)));
        terms.roll = Lroll.scalar();
        total = total + w.alpha * Lroll;
    }
    if (w.beta > 0.0) total = total + w.beta * Lmass;
    if (w.gamma > 0.0) total = total + w.gamma * Lstrong;
    if (w.eta > 0.0) total = total + w.eta * Lanchor;
    if (w.lambda_reg > 0.0) total = total + w.lambda_reg * Lreg;

    terms.weak = Lweak.scalar();
    terms.mass = Lmass.scalar();
    terms.strong = Lstrong.scalar();
    terms.anchor = Lanchor.scalar();
    terms.reg = Lreg.scalar();
    terms.total = total.scalar();
    detail::require_finite_term(terms.weak, "weak");
    detail::require_finite_term(terms.roll, "roll");
    detail::require_finite_term(terms.mass, "mass");
    detail::require_finite_term(terms.strong, "strong");
    detail::require_finite_term(terms.anchor, "anchor");
    detail::require_finite_term(terms.reg, "reg");

    LossEvaluation out;
    out.terms = terms;
    if (with_gradient) {
        tape.backward(total);
        out.gradient = tape.gradient(theta).matrix();
    }
    return out;
}

/// small_normal: net weights ~ N(0, scale^2), biases zero. fan_in_uniform: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
enum class InitScheme { small_normal, fan_in_uniform };

/// Backbones start at zero except the diffusion constant, set so that D̂ ≈ 0.035 before the net contributes.
inline SurrogateParams init_params(const SurrogateLayout& layout, std::uint64_t seed, InitScheme scheme = InitScheme::fan_in_uniform,
                                   double scale = kNetInitScale, bool zero_output = true) {
    SurrogateParams p = SurrogateParams::zeros(layout);
    auto gen = make_stream({streams::network_init, seed});
    std::normal_distribution<double> normal(0.0, scale);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto fill = [&](Eigen::Index at, Eigen::Index n, double fan_in, bool bias) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (scheme == InitScheme::small_normal) {
                p.theta[at + i] = bias ? 0.0 : normal(gen);
            } else {
                p.theta[at + i] = unit(gen) / std::sqrt(fan_in);
            }
        }
    };
    for (const BranchLayout* L : {&layout.D, &layout.R}) {
        const Eigen::Index w = L->width;
        fill(L->w1_at(), w, 1.0, false);
        fill(L->b1_at(), w, 1.0, true);
        for (int l = 1; l < L->depth; ++l) {
            fill(L->hidden_w_at(l), w * w, static_cast<double>(w), false);
            fill(L->hidden_b_at(l), w, static_cast<double>(w), true);
        }
        fill(L->out_w_at(), w, static_cast<double>(w), false);
        fill(L->out_b_at(), 1, static_cast<double>(w), true);
        if (zero_output) p.theta.segment(L->out_w_at(), w + 1).setZero();
    }
    p.theta[layout.D.poly_at()] = std::log(std::expm1(kDiffusionInitLevel - kDiffusionFloor));
    return p;
}

struct TrainingConfig {
    int epochs = 150;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double divergence_bound = 1e6;
};

struct TrainingResult {
    SurrogateParams params;
    std::vector<LossTerms> history;  // loss at the start of each epoch
};

/// Divergence or non-finite loss; carries the history up to the failure.
class TrainingAborted : public TrainingError {
public:
    TrainingAborted(const std::string& what, std::vector<LossTerms> history) : TrainingError(what), history_(std::move(history)) {}
    const std::vector<LossTerms>& history() const { return history_; }

private:
    std::vector<LossTerms> history_;
};

/// Full-batch Adam from a given initialization.
inline TrainingResult train_from(SurrogateParams params, const TrainingSet& data, const LossWeights& weights, const TrainingConfig& cfg = {}) {
    if (cfg.epochs < 0) throw Error("train: epochs must be nonnegative");
    TrainingResult res;
    const Eigen::Index n = params.theta.size();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n), v = Eigen::VectorXd::Zero(n);
    double b1t = 1.0, b2t = 1.0;
    for (int e = 0; e < cfg.epochs; ++e) {
        LossEvaluation ev;
        try {
            ev = hybrid_loss(params, data, weights, true);
        } catch (const TrainingError& err) {
            throw TrainingAborted(std::string(err.what()) + " at epoch " + std::to_string(e), res.history);
        }
        res.history.push_back(ev.terms);
        if (ev.terms.total > cfg.divergence_bound)
            throw TrainingAborted("training diverged at epoch " + std::to_string(e) + " (loss " + std::to_string(ev.terms.total) + ")", res.history);
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * ev.gradient;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * ev.gradient.cwiseAbs2();
        const Eigen::ArrayXd mhat = m.array() / (1.0 - b1t);
        const Eigen::ArrayXd vhat = v.array() / (1.0 - b2t);
        params.theta.array() -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    res.params = std::move(params);
    return res;
}

inline TrainingResult train(const TrainingSet& data, const LossWeights& weights, std::uint64_t seed, const TrainingConfig& cfg = {},
                            const SurrogateLayout& layout = SurrogateLayout::make()) {
    return train_from(init_params(layout, seed), data, weights, cfg);
}

inline void write_loss_history_csv(std::ostream& os, const std::vector<LossTerms>& history) {
    os << "epoch,total,weak,roll,mass,strong,anchor,reg\n";
    char buf[256];
    for (std::size_t e = 0; e < history.size(); ++e) {
        const auto& h = history[e];
        std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e\n", e, h.total, h.weak, h.roll, h.mass, h.strong, h.anchor, h.reg);
        os << buf;
    }
}

}  // namespace closurelab
