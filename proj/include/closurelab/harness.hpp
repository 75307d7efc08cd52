#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "closurelab/baselines.hpp"
#include "closurelab/closure.hpp"
#include "closurelab/error.hpp"
#include "closurelab/io.hpp"
#include "closurelab/metrics.hpp"
#include "closurelab/pde.hpp"
#include "closurelab/rng.hpp"
#include "closurelab/surrogate.hpp"
#include "closurelab/symbolic.hpp"
#include "closurelab/weak_form.hpp"

namespace closurelab {

// ---------------------------------------------------------------------------------------------------------------
// Observation settings

struct ObservationSetting {
    enum class Tag { clean, noise, sparse, combined };

    Tag tag = Tag::clean;
    double noise_pct = 0.0;
    int stride_x = 1;
    int stride_t = 1;

    static ObservationSetting clean() { return {}; }
    static ObservationSetting noise(double pct) { return pct == 0.0 ? clean() : ObservationSetting{Tag::noise, pct, 1, 1}; }
    static ObservationSetting strided(int sx, int st) {
        return (sx == 1 && st == 1) ? clean() : ObservationSetting{Tag::sparse, 0.0, sx, st};
    }
    static ObservationSetting sparse() { return strided(2, 2); }
    static ObservationSetting combined(double pct, int sx, int st) {
        if (pct == 0.0) return strided(sx, st);
        if (sx == 1 && st == 1) return noise(pct);
        return {Tag::combined, pct, sx, st};
    }

    bool is_clean() const { return noise_pct == 0.0 && stride_x == 1 && stride_t == 1; }

    void validate() const {
        if (!(noise_pct >= 0.0) || !std::isfinite(noise_pct)) throw Error("ObservationSetting: noise_pct must be finite and nonnegative");
        if (stride_x < 1 || stride_t < 1) throw Error("ObservationSetting: strides must be positive");
        const bool noisy = noise_pct > 0.0, strided_ = stride_x > 1 || stride_t > 1;
        const Tag expect = noisy ? (strided_ ? Tag::combined : Tag::noise) : (strided_ ? Tag::sparse : Tag::clean);
        if (tag != expect) throw Error("ObservationSetting: tag does not match noise and strides");
    }

    /// clean, noise5, sparse (strides 2,2), stride2_1, noise5_stride2_2.
    std::string name() const {
        validate();
        char pct[32];
        std::snprintf(pct, sizeof pct, "%g", noise_pct);
        const std::string strides = "stride" + std::to_string(stride_x) + "_" + std::to_string(stride_t);
        switch (tag) {
            case Tag::clean: return "clean";
            case Tag::noise: return std::string("noise") + pct;
            case Tag::sparse: return (stride_x == 2 && stride_t == 2) ? "sparse" : strides;
            case Tag::combined: return std::string("noise") + pct + "_" + strides;
        }
        return "?";
    }

    friend bool operator==(const ObservationSetting&, const ObservationSetting&) = default;
};

inline ObservationSetting parse_setting(std::string_view s) {
    auto fail = [&]() -> ObservationSetting { throw Error("unknown observation setting '" + std::string(s) + "'"); };
    auto parse_strides = [&](std::string_view t, int& sx, int& st) {
        if (t == "sparse") {
            sx = st = 2;
            return true;
        }
        if (!t.starts_with("stride")) return false;
        t.remove_prefix(6);
        const auto us = t.find('_');
        if (us == std::string_view::npos) return false;
        try {
            std::size_t used = 0;
            sx = std::stoi(std::string(t.substr(0, us)), &used);
            if (used != us) return false;
            const std::string rest(t.substr(us + 1));
            st = std::stoi(rest, &used);
            return used == rest.size();
        } catch (const std::exception&) {
            return false;
        }
    };
    if (s == "clean") return ObservationSetting::clean();
    int sx = 1, st = 1;
    if (parse_strides(s, sx, st)) {
        if (sx < 1 || st < 1) fail();
        return ObservationSetting::strided(sx, st);
    }
    if (!s.starts_with("noise")) return fail();
    std::string_view body = s.substr(5);
    const auto us = body.find('_');
    const std::string pct_text(body.substr(0, us));
    double pct = 0.0;
    try {
        std::size_t used = 0;
        pct = std::stod(pct_text, &used);
        if (used != pct_text.size()) fail();
    } catch (const std::invalid_argument&) {
        fail();
    }
    if (!(pct >= 0.0)) fail();
    if (us == std::string_view::npos) return ObservationSetting::noise(pct);
    if (!parse_strides(body.substr(us + 1), sx, st) || sx < 1 || st < 1) fail();
    return ObservationSetting::combined(pct, sx, st);
}

/// Noise (sigma = pct/100 * std of the trajectory's own clean states), clipping, then strides keeping index 0.
/// The clip range defaults to the trajectory's own [min, max]; callers pass the clean-dataset range.
inline Trajectory degrade(const Trajectory& clean, const ObservationSetting& setting, std::uint64_t seed,
                          std::optional<Interval> clip = std::nullopt) {
    setting.validate();
    if (setting.is_clean()) return clean;
    if (clean.grid.n_x % setting.stride_x != 0) {
        throw Error("degrade: spatial stride " + std::to_string(setting.stride_x) + " does not divide n_x = " + std::to_string(clean.grid.n_x));
    }
    Snapshots states = clean.states;
    if (setting.noise_pct > 0.0) {
        const double mean = states.mean();
        const double sd = std::sqrt((states - mean).square().mean());
        const double sigma = setting.noise_pct / 100.0 * sd;
        auto gen = make_stream({streams::observation_noise, seed, clean.seed});
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index n = 0; n < states.rows(); ++n)
            for (Eigen::Index i = 0; i < states.cols(); ++i) states(n, i) += sigma * normal(gen);
        const Interval range = clip.value_or(Interval{clean.min_state(), clean.max_state()});
        states = states.max(range.lo).min(range.hi);
    }
    const Eigen::Index rows = (states.rows() - 1) / setting.stride_t + 1;
    const Eigen::Index cols = states.cols() / setting.stride_x;
    Trajectory out;
    out.grid = Grid1D(static_cast<int>(cols));
    out.t0 = clean.t0;
    out.dt_save = clean.dt_save * setting.stride_t;
    out.seed = clean.seed;
    out.states.resize(rows, cols);
    for (Eigen::Index n = 0; n < rows; ++n)
        for (Eigen::Index i = 0; i < cols; ++i) out.states(n, i) = states(n * setting.stride_t, i * setting.stride_x);
    return out;
}

/// Periodic trigonometric interpolant of cell-centred samples, evaluated at the cell centres of an n_new grid.
inline State resample_periodic(const State& u, int n_new) {
    const auto N = static_cast<int>(u.size());
    if (N < 1 || n_new < 1) throw Error("resample_periodic: empty grid");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const State x = Grid1D(N).centers();
    const State y = Grid1D(n_new).centers();
    const int half = N / 2;
    State out = State::Constant(n_new, u.mean());
    for (int k = 1; k <= half; ++k) {
        const State c = (two_pi * k * x).cos(), s = (two_pi * k * x).sin();
        const bool nyquist = (N % 2 == 0 && k == half);
        const double scale = nyquist ? 1.0 / N : 2.0 / N;
        const double a = scale * (u * c).sum(), b = scale * (u * s).sum();
        out += a * (two_pi * k * y).cos() + b * (two_pi * k * y).sin();
    }
    return out;
}

// ---------------------------------------------------------------------------------------------------------------
// Protocols

struct IcFamily {
    int n_modes = 4;
    double offset = 0.5;
    double amplitude = 0.4;
};

struct Protocol {
    std::string name = "default";
    int n_x = 64;
    double dt = 1e-4;
    double T = 0.1;
    int save_every = 10;
    int n_train = 8;
    int n_unseen = 4;
    IcFamily ic;
    int epochs = 150;
    double lr = 1e-3;
    int n_fourier = 4;
    int n_bump = 4;
    int degD = 2;
    int degR = 3;
    double ridge = kDefaultRidge;

    SimulationConfig sim() const { return {dt, T, save_every, n_x}; }

    void validate() const {
        sim().validate();
        if (n_train < 1) throw Error("Protocol: n_train must be positive");
        if (n_unseen < 1) throw Error("Protocol: n_unseen must be positive");
        if (ic.n_modes < 1 || ic.amplitude < 0.0) throw Error("Protocol: invalid initial-condition family");
        if (epochs < 0) throw Error("Protocol: epochs must be nonnegative");
        if (!(lr > 0.0)) throw Error("Protocol: lr must be positive");
        if (degD < 0 || degR < 0 || n_fourier < 0 || n_bump < 0) throw Error("Protocol: negative size");
    }

    /// Every field, for cache keys.
    std::string key() const {
        std::ostringstream os;
        os << name << ';' << n_x << ';' << format_number(dt) << ';' << format_number(T) << ';' << save_every << ';' << n_train << ';'
           << n_unseen << ';' << ic.n_modes << ';' << format_number(ic.offset) << ';' << format_number(ic.amplitude) << ';' << epochs << ';'
           << format_number(lr) << ';' << n_fourier << ';' << n_bump << ';' << degD << ';' << degR << ';' << format_number(ridge);
        return os.str();
    }
};

enum class ExcitationRegime { low, high };

inline std::string_view to_string(ExcitationRegime r) { return r == ExcitationRegime::low ? "low" : "high"; }

namespace presets {

inline Protocol default_protocol() { return {}; }

/// Low regime sits inside the single bin [0.5, 0.625); the high amplitude reaches every bin of [0, 1].
inline Protocol excitation_light(ExcitationRegime regime) {
    Protocol p;
    p.name = regime == ExcitationRegime::low ? "excitation_light_low" : "excitation_light_high";
    p.n_x = 48;
    p.T = 0.05;
    p.save_every = 5;
    p.n_train = 6;
    p.ic = regime == ExcitationRegime::low ? IcFamily{4, 0.5625, 0.02} : IcFamily{4, 0.5, 0.6};
    return p;
}

inline Protocol cross_fine() {
    Protocol p;
    p.name = "cross_fine";
    p.T = 0.05;
    p.save_every = 5;
    return p;
}

inline Protocol cross_validation() {
    Protocol p;
    p.name = "cross_validation";
    p.n_x = 48;
    p.T = 0.0498;
    p.save_every = 6;
    return p;
}

}  // namespace presets

inline Protocol preset(std::string_view name) {
    if (name == "default") return presets::default_protocol();
    if (name == "excitation_light_low") return presets::excitation_light(ExcitationRegime::low);
    if (name == "excitation_light_high" || name == "excitation_light") return presets::excitation_light(ExcitationRegime::high);
    if (name == "cross_fine") return presets::cross_fine();
    if (name == "cross_validation") return presets::cross_validation();
    throw Error("unknown protocol preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------------------------------------------
// Configuration overrides (flat key=value)

struct Overrides {
    std::map<std::string, std::string> values;

    bool empty() const { return values.empty(); }
    void set(const std::string& k, const std::string& v) { values[k] = v; }
    void merge(const Overrides& o) {
        for (const auto& [k, v] : o.values) values[k] = v;
    }
};

inline bool is_protocol_key(std::string_view k) {
    static const char* keys[] = {"n_x", "dt", "T", "save_every", "n_train", "n_unseen", "ic_modes", "ic_offset", "ic_amplitude",
                                 "epochs", "lr", "n_fourier", "n_bump", "degD", "degR", "ridge"};
    return std::find(std::begin(keys), std::end(keys), k) != std::end(keys);
}

inline bool is_weight_key(std::string_view k) { return k == "alpha" || k == "beta" || k == "gamma" || k == "eta" || k == "lambda_reg"; }

namespace harness_detail {
inline double to_double(const std::string& k, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw Error("config: '" + k + "' expects a number, got '" + v + "'");
    return x;
}
inline int to_int(const std::string& k, const std::string& v) {
    const double x = to_double(k, v);
    if (x != std::floor(x)) throw Error("config: '" + k + "' expects an integer, got '" + v + "'");
    return static_cast<int>(x);
}
}  // namespace harness_detail

inline Protocol apply_overrides(Protocol p, const Overrides& o) {
    using harness_detail::to_double;
    using harness_detail::to_int;
    for (const auto& [k, v] : o.values) {
        if (k == "n_x") p.n_x = to_int(k, v);
        else if (k == "dt") p.dt = to_double(k, v);
        else if (k == "T") p.T = to_double(k, v);
        else if (k == "save_every") p.save_every = to_int(k, v);
        else if (k == "n_train") p.n_train = to_int(k, v);
        else if (k == "n_unseen") p.n_unseen = to_int(k, v);
        else if (k == "ic_modes") p.ic.n_modes = to_int(k, v);
        else if (k == "ic_offset") p.ic.offset = to_double(k, v);
        else if (k == "ic_amplitude") p.ic.amplitude = to_double(k, v);
        else if (k == "epochs") p.epochs = to_int(k, v);
        else if (k == "lr") p.lr = to_double(k, v);
        else if (k == "n_fourier") p.n_fourier = to_int(k, v);
        else if (k == "n_bump") p.n_bump = to_int(k, v);
        else if (k == "degD") p.degD = to_int(k, v);
        else if (k == "degR") p.degR = to_int(k, v);
        else if (k == "ridge") p.ridge = to_double(k, v);
    }
    p.validate();
    return p;
}

inline LossWeights apply_overrides(LossWeights w, const Overrides& o) {
    using harness_detail::to_double;
    for (const auto& [k, v] : o.values) {
        if (k == "alpha") w.alpha = to_double(k, v);
        else if (k == "beta") w.beta = to_double(k, v);
        else if (k == "gamma") w.gamma = to_double(k, v);
        else if (k == "eta") w.eta = to_double(k, v);
        else if (k == "lambda_reg") w.lambda_reg = to_double(k, v);
    }
    w.validate();
    return w;
}

/// "# comment" and blank lines ignored; every other line is key = value.
inline Overrides parse_config(std::istream& is, const std::string& origin = "config") {
    Overrides o;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (!is_protocol_key(k) && !is_weight_key(k) && k != "workers")
            throw Error(origin + ":" + std::to_string(lineno) + ": unknown key '" + k + "'");
        o.set(k, v);
    }
    return o;
}

inline Overrides load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    return parse_config(in, path);
}

// ---------------------------------------------------------------------------------------------------------------
// Data generation

inline std::uint64_t training_ic_seed(int seed, int m) { return stream_key({static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(m)}); }
inline std::uint64_t unseen_ic_seed(int seed, int j) {
    return stream_key({streams::unseen_ic, static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(j)});
}

inline std::vector<Trajectory> generate_training_data(const Protocol& p, CaseId c, int seed) {
    p.validate();
    const ClosurePair truth = true_closure(c);
    const Grid1D grid(p.n_x);
    std::vector<Trajectory> out;
    for (int m = 0; m < p.n_train; ++m) {
        const auto s = training_ic_seed(seed, m);
        out.push_back(simulate(random_fourier_ic(p.ic.n_modes, p.ic.offset, p.ic.amplitude, s, grid), truth, p.sim(), s));
    }
    return out;
}

inline std::vector<State> unseen_ics(const Protocol& p, int seed) {
    const Grid1D grid(p.n_x);
    std::vector<State> out;
    for (int j = 0; j < p.n_unseen; ++j) out.push_back(random_fourier_ic(p.ic.n_modes, p.ic.offset, p.ic.amplitude, unseen_ic_seed(seed, j), grid));
    return out;
}

inline Interval dataset_range(const std::vector<Trajectory>& trajs) {
    if (trajs.empty()) throw Error("dataset_range: no trajectories");
    Interval r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& t : trajs) {
        r.lo = std::min(r.lo, t.min_state());
        r.hi = std::max(r.hi, t.max_state());
    }
    return r;
}

// ---------------------------------------------------------------------------------------------------------------
// Records and CSV

enum class Method { strong_poly, weak_poly, neural, neural_symbolic };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::strong_poly: return "strong_poly";
        case Method::weak_poly: return "weak_poly";
        case Method::neural: return "neural";
        case Method::neural_symbolic: return "neural+symbolic";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    if (s == "strong_poly") return Method::strong_poly;
    if (s == "weak_poly") return Method::weak_poly;
    if (s == "neural") return Method::neural;
    if (s == "neural+symbolic" || s == "neural_symbolic") return Method::neural_symbolic;
    throw Error("unknown method '" + std::string(s) + "'");
}

struct BenchmarkRecord {
    std::string table;
    std::string preset;
    std::string case_name;
    std::string setting;
    std::string method;
    std::string variant;  // objective variant, excitation regime or empty
    int seed = 0;
    std::string status = "ok";

    double err_D = std::nan("");
    double err_R = std::nan("");
    double weak_loss = std::nan("");
    double unseen_roll = std::nan("");
    std::optional<double> sym_err_D, sym_err_R;  // symbolic vs surrogate
    std::optional<double> bir_D, bir_R;
    std::optional<double> cross_grid_roll;
    std::optional<double> bin_coverage;
    std::optional<double> weak_diffusion_energy;

    bool ok() const { return status == "ok"; }
};

inline constexpr int kMetricCount = 11;
inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"ErrD",  "ErrR",  "weak_loss", "unseen_roll", "sym_surrogate_ErrD", "sym_surrogate_ErrR",
                                                   "BIR_D", "BIR_R", "cross_grid_roll", "bin_coverage", "weak_diffusion_energy"};
    return names;
}

inline std::vector<std::optional<double>> metric_values(const BenchmarkRecord& r) {
    if (!r.ok()) return std::vector<std::optional<double>>(kMetricCount);
    return {r.err_D, r.err_R, r.weak_loss, r.unseen_roll, r.sym_err_D, r.sym_err_R, r.bir_D, r.bir_R, r.cross_grid_roll, r.bin_coverage,
            r.weak_diffusion_energy};
}

inline const std::vector<std::string>& key_columns() {
    static const std::vector<std::string> k = {"table", "preset", "case", "setting", "method", "variant"};
    return k;
}

inline std::vector<std::string> runs_header() {
    std::vector<std::string> h = key_columns();
    h.push_back("seed");
    h.push_back("status");
    for (const auto& m : metric_names()) h.push_back(m);
    return h;
}

inline std::vector<std::string> aggregate_header() {
    std::vector<std::string> h = key_columns();
    h.push_back("n_seeds");
    h.push_back("n_failed");
    for (const auto& m : metric_names()) {
        h.push_back(m + "_mean");
        h.push_back(m + "_std");
    }
    return h;
}

namespace harness_detail {
inline std::string join(const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) s += ',';
        s += cells[i];
    }
    return s;
}
inline std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}
}  // namespace harness_detail

inline std::string format_run_row(const BenchmarkRecord& r) {
    std::vector<std::string> cells = {r.table, r.preset, r.case_name, r.setting, r.method, r.variant, std::to_string(r.seed),
                                      harness_detail::sanitize(r.status)};
    for (const auto& v : metric_values(r)) cells.push_back(format_optional(v));
    return harness_detail::join(cells);
}

inline void write_runs_csv(std::ostream& os, const std::vector<BenchmarkRecord>& records) {
    os << harness_detail::join(runs_header()) << '\n';
    for (const auto& r : records) os << format_run_row(r) << '\n';
}

struct AggregateRow {
    std::vector<std::string> key;
    int n_seeds = 0;
    int n_failed = 0;
    std::vector<std::optional<double>> mean, std;
};

/// Mean and sample standard deviation (n - 1) over successful seeds; a single seed has std 0.
/// A non-finite seed value makes the mean non-finite and the std undefined.
inline std::vector<AggregateRow> aggregate(const std::vector<BenchmarkRecord>& records) {
    std::vector<AggregateRow> rows;
    std::vector<std::vector<const BenchmarkRecord*>> members;
    for (const auto& r : records) {
        const std::vector<std::string> key = {r.table, r.preset, r.case_name, r.setting, r.method, r.variant};
        auto it = std::find_if(rows.begin(), rows.end(), [&](const AggregateRow& a) { return a.key == key; });
        if (it == rows.end()) {
            rows.push_back({key, 0, 0, {}, {}});
            members.emplace_back();
            it = rows.end() - 1;
        }
        members[static_cast<std::size_t>(it - rows.begin())].push_back(&r);
    }
    for (std::size_t g = 0; g < rows.size(); ++g) {
        auto& row = rows[g];
        row.n_seeds = static_cast<int>(members[g].size());
        row.mean.assign(kMetricCount, std::nullopt);
        row.std.assign(kMetricCount, std::nullopt);
        for (const auto* r : members[g])
            if (!r->ok()) ++row.n_failed;
        for (int m = 0; m < kMetricCount; ++m) {
            std::vector<double> v;
            for (const auto* r : members[g]) {
                const auto x = metric_values(*r)[static_cast<std::size_t>(m)];
                if (x) v.push_back(*x);
            }
            if (v.empty()) continue;
            double sum = 0.0;
            bool finite = true;
            for (double x : v) {
                sum += x;
                finite = finite && std::isfinite(x);
            }
            const double mean = sum / static_cast<double>(v.size());
            row.mean[static_cast<std::size_t>(m)] = mean;
            if (!finite) {
                row.std[static_cast<std::size_t>(m)] = std::nan("");
            } else if (v.size() == 1) {
                row.std[static_cast<std::size_t>(m)] = 0.0;
            } else {
                double ss = 0.0;
                for (double x : v) ss += (x - mean) * (x - mean);
                row.std[static_cast<std::size_t>(m)] = std::sqrt(ss / static_cast<double>(v.size() - 1));
            }
        }
    }
    return rows;
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
    os << harness_detail::join(aggregate_header()) << '\n';
    for (const auto& r : rows) {
        std::vector<std::string> cells = r.key;
        cells.push_back(std::to_string(r.n_seeds));
        cells.push_back(std::to_string(r.n_failed));
        for (int m = 0; m < kMetricCount; ++m) {
            cells.push_back(format_optional(r.mean[static_cast<std::size_t>(m)]));
            cells.push_back(format_optional(r.std[static_cast<std::size_t>(m)]));
        }
        os << harness_detail::join(cells) << '\n';
    }
}

inline void write_table(const std::string& out_dir, const std::string& table, const std::vector<BenchmarkRecord>& records) {
    {
        std::ofstream f(out_dir + "/" + table + "_runs.csv");
        if (!f) throw Error("cannot write '" + out_dir + "/" + table + "_runs.csv'");
        write_runs_csv(f, records);
    }
    std::ofstream f(out_dir + "/" + table + ".csv");
    if (!f) throw Error("cannot write '" + out_dir + "/" + table + ".csv'");
    write_aggregate_csv(f, aggregate(records));
}

inline bool all_ok(const std::vector<BenchmarkRecord>& records) {
    return std::all_of(records.begin(), records.end(), [](const BenchmarkRecord& r) { return r.ok(); });
}

// ---------------------------------------------------------------------------------------------------------------
// Worker pool

/// Runs jobs 0..n-1 on at most `workers` threads; results keep job order.
template <class T>
std::vector<T> run_jobs(int n, int workers, const std::function<T(int)>& job) {
    std::vector<std::optional<T>> slots(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) slots[static_cast<std::size_t>(i)] = job(i);
    };
    const int w = std::max(1, std::min(workers, n));
    if (w == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < w; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    std::vector<T> out;
    out.reserve(slots.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------------------------------------------
// Harness

/// Compute-once store keyed by string; concurrent callers of the same key wait for the first.
template <class T>
class Memo {
public:
    std::shared_ptr<const T> get(const std::string& key, const std::function<T()>& make) {
        std::shared_future<std::shared_ptr<const T>> fut;
        std::promise<std::shared_ptr<const T>> promise;
        bool owner = false;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = entries_.find(key);
            if (it == entries_.end()) {
                fut = promise.get_future().share();
                entries_.emplace(key, fut);
                owner = true;
            } else {
                fut = it->second;
            }
        }
        if (owner) {
            try {
                promise.set_value(std::make_shared<const T>(make()));
            } catch (...) {
                promise.set_exception(std::current_exception());
            }
        }
        return fut.get();
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return entries_.size();
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_future<std::shared_ptr<const T>>> entries_;
};

struct HarnessConfig {
    std::vector<int> seeds = {0, 1, 2};
    int workers = 1;
    Overrides overrides;  // applied to every preset and to the full-objective weights
    std::ostream* log = nullptr;
};

struct NeuralFit {
    SurrogateParams params;
    ClosurePair closure;
    std::vector<LossTerms> history;
};

struct SymbolicFit {
    SymbolicPair pair;
    ClosurePair closure;
};

class Harness {
public:
    explicit Harness(HarnessConfig cfg = {}) : cfg_(std::move(cfg)) {
        full_weights_ = apply_overrides(LossWeights{}, cfg_.overrides);
        if (cfg_.seeds.empty()) throw Error("Harness: no seeds");
        if (cfg_.workers < 1) throw Error("Harness: workers must be positive");
    }

    const HarnessConfig& config() const { return cfg_; }

    Protocol protocol(std::string_view name) const { return apply_overrides(preset(name), cfg_.overrides); }

    LossWeights weights(ObjectiveVariant v) const {
        switch (v) {
            case ObjectiveVariant::weak_only: return {0.0, 0.0, 0.0, 0.0, 0.0};
            case ObjectiveVariant::no_strong: {
                LossWeights w = full_weights_;
                w.gamma = 0.0;
                return w;
            }
            case ObjectiveVariant::full: return full_weights_;
        }
        throw Error("unknown objective variant");
    }

    std::shared_ptr<const std::vector<Trajectory>> clean_data(const Protocol& p, CaseId c, int seed) {
        return data_.get(p.key() + "|" + std::string(to_string(c)) + "|" + std::to_string(seed), [&] {
            log("simulate " + p.name + " " + std::string(to_string(c)) + " seed " + std::to_string(seed));
            return generate_training_data(p, c, seed);
        });
    }

    std::shared_ptr<const std::vector<Trajectory>> observed_data(const Protocol& p, CaseId c, const ObservationSetting& s, int seed) {
        auto clean = clean_data(p, c, seed);
        if (s.is_clean()) return clean;
        return data_.get(p.key() + "|" + std::string(to_string(c)) + "|" + std::to_string(seed) + "|" + s.name(), [&] {
            const Interval clip = dataset_range(*clean);
            std::vector<Trajectory> out;
            for (const auto& t : *clean) out.push_back(degrade(t, s, static_cast<std::uint64_t>(seed), clip));
            return out;
        });
    }

    /// Common evaluation support: range of the default-protocol clean training data for (case, seed).
    Interval support(CaseId c, int seed) { return dataset_range(*clean_data(protocol("default"), c, seed)); }

    TestFunctionFamily tests(const Protocol& p, int n_x) const { return build_test_functions(p.n_fourier, p.n_bump, Grid1D(n_x)); }

    std::shared_ptr<const NeuralFit> neural(const Protocol& p, CaseId c, const ObservationSetting& s, int seed,
                                            ObjectiveVariant v = ObjectiveVariant::full) {
        const LossWeights w = weights(v);
        std::ostringstream key;
        key << p.key() << '|' << to_string(c) << '|' << seed << '|' << s.name() << '|' << to_string(v) << '|' << format_number(w.alpha) << ';'
            << format_number(w.beta) << ';' << format_number(w.gamma) << ';' << format_number(w.eta) << ';' << format_number(w.lambda_reg);
        return neural_.get(key.str(), [&] {
            auto data = observed_data(p, c, s, seed);
            const auto ts = make_training_set(*data, tests(p, data->front().grid.n_x), p.dt);
            TrainingConfig tc;
            tc.epochs = p.epochs;
            tc.lr = p.lr;
            const auto t0 = std::chrono::steady_clock::now();
            auto result = train(ts, w, static_cast<std::uint64_t>(seed), tc);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log("train " + p.name + " " + std::string(to_string(c)) + " " + s.name() + " " + std::string(to_string(v)) + " seed " +
                std::to_string(seed) + " (" + std::to_string(secs) + " s)");
            NeuralFit fit{result.params, to_closure(result.params), std::move(result.history)};
            return fit;
        });
    }

    std::shared_ptr<const SymbolicFit> symbolic(const Protocol& p, CaseId c, const ObservationSetting& s, int seed,
                                                ObjectiveVariant v = ObjectiveVariant::full) {
        auto net = neural(p, c, s, seed, v);
        const Interval sup = support(c, seed);
        std::ostringstream key;
        key << p.key() << '|' << to_string(c) << '|' << seed << '|' << s.name() << '|' << to_string(v) << '|' << format_number(sup.lo) << ';'
            << format_number(sup.hi);
        return symbolic_.get(key.str(), [&] {
            SymbolicPair pair = compress(net->closure, sup.lo, sup.hi, {}, kSupportPoints, static_cast<std::uint64_t>(seed));
            return SymbolicFit{pair, pair.to_closure()};
        });
    }

    std::shared_ptr<const PolyClosure> baseline(const Protocol& p, CaseId c, const ObservationSetting& s, int seed, Method m) {
        const std::string key = p.key() + "|" + std::string(to_string(c)) + "|" + std::to_string(seed) + "|" + s.name() + "|" +
                                std::string(to_string(m));
        return baseline_.get(key, [&] {
            auto data = observed_data(p, c, s, seed);
            if (m == Method::strong_poly) return fit_strong_poly(*data, p.degD, p.degR, p.ridge);
            if (m == Method::weak_poly) return fit_weak_poly(*data, tests(p, data->front().grid.n_x), p.degD, p.degR, p.ridge);
            throw Error("baseline: not a polynomial method");
        });
    }

    ClosurePair closure_for(const Protocol& p, CaseId c, const ObservationSetting& s, int seed, Method m) {
        switch (m) {
            case Method::strong_poly:
            case Method::weak_poly: return baseline(p, c, s, seed, m)->to_closure();
            case Method::neural: return neural(p, c, s, seed)->closure;
            case Method::neural_symbolic: return symbolic(p, c, s, seed)->closure;
        }
        throw Error("unknown method");
    }

    double weak_loss_of(const Protocol& p, const std::vector<Trajectory>& data, const ClosurePair& closure) const {
        return weak_loss(weak_residual(data, closure, tests(p, data.front().grid.n_x)));
    }

    double unseen_roll(const Protocol& p, CaseId c, int seed, const ClosurePair& est) const {
        return rollout_error(true_closure(c), est, unseen_ics(p, seed), p.sim()).aggregate;
    }

    // Runners -------------------------------------------------------------------------------------------------

    std::vector<BenchmarkRecord> run_baseline_map(const std::vector<CaseId>& cases, const std::vector<ObservationSetting>& settings,
                                                  const std::vector<Method>& methods, const std::string& preset_name = "default") {
        const Protocol p = protocol(preset_name);
        std::vector<std::function<BenchmarkRecord()>> jobs;
        for (CaseId c : cases)
            for (const auto& s : settings)
                for (Method m : methods)
                    for (int seed : cfg_.seeds) {
                        BenchmarkRecord base = stub("baseline_map", p, c, s, std::string(to_string(m)), "", seed);
                        jobs.push_back([this, p, c, s, m, seed, base] {
                            return guarded(base, [&](BenchmarkRecord& r) {
                                const ClosurePair truth = true_closure(c);
                                const ClosurePair est = closure_for(p, c, s, seed, m);
                                const auto err = closure_error(truth, est, support(c, seed));
                                r.err_D = err.err_D;
                                r.err_R = err.err_R;
                                r.weak_loss = weak_loss_of(p, *observed_data(p, c, s, seed), est);
                                r.unseen_roll = unseen_roll(p, c, seed, est);
                                if (m == Method::neural_symbolic) fill_bias(r, p, c, s, seed);
                            });
                        });
                    }
        return run(jobs);
    }

    std::vector<BenchmarkRecord> run_excitation(const std::vector<CaseId>& cases) {
        std::vector<std::function<BenchmarkRecord()>> jobs;
        for (CaseId c : cases)
            for (ExcitationRegime regime : {ExcitationRegime::low, ExcitationRegime::high})
                for (int seed : cfg_.seeds) {
                    const Protocol p = protocol(regime == ExcitationRegime::low ? "excitation_light_low" : "excitation_light_high");
                    const auto s = ObservationSetting::clean();
                    BenchmarkRecord base = stub("excitation", p, c, s, "neural", std::string(to_string(regime)), seed);
                    jobs.push_back([this, p, c, s, seed, base] {
                        return guarded(base, [&](BenchmarkRecord& r) {
                            auto data = clean_data(p, c, seed);
                            const auto diag = excitation_diagnostics(*data);
                            r.bin_coverage = diag.bin_coverage;
                            r.weak_diffusion_energy = diag.weak_diffusion_energy;
                            const ClosurePair est = neural(p, c, s, seed)->closure;
                            const auto err = closure_error(true_closure(c), est, support(c, seed));
                            r.err_D = err.err_D;
                            r.err_R = err.err_R;
                            r.weak_loss = weak_loss_of(p, *data, est);
                            r.unseen_roll = unseen_roll(p, c, seed, est);
                        });
                    });
                }
        return run(jobs);
    }

    /// ErrD/ErrR, weak loss and unseen rollout are the neural surrogate's; symbolic columns compare against it.
    std::vector<BenchmarkRecord> run_symbolic_summary(const std::vector<CaseId>& cases, const std::vector<ObservationSetting>& settings) {
        const Protocol p = protocol("default");
        std::vector<std::function<BenchmarkRecord()>> jobs;
        for (CaseId c : cases)
            for (const auto& s : settings)
                for (int seed : cfg_.seeds) {
                    BenchmarkRecord base = stub("symbolic_summary", p, c, s, "neural+symbolic", "", seed);
                    jobs.push_back([this, p, c, s, seed, base] {
                        return guarded(base, [&](BenchmarkRecord& r) {
                            const ClosurePair net = neural(p, c, s, seed)->closure;
                            const auto err = closure_error(true_closure(c), net, support(c, seed));
                            r.err_D = err.err_D;
                            r.err_R = err.err_R;
                            r.weak_loss = weak_loss_of(p, *observed_data(p, c, s, seed), net);
                            r.unseen_roll = unseen_roll(p, c, seed, net);
                            fill_bias(r, p, c, s, seed);
                        });
                    });
                }
        return run(jobs);
    }

    std::vector<BenchmarkRecord> run_noise_sweep(const std::vector<CaseId>& cases, const std::vector<double>& levels = {0, 1, 2, 3, 4, 5}) {
        const Protocol p = protocol("default");
        std::vector<std::function<BenchmarkRecord()>> jobs;
        for (CaseId c : cases)
            for (double level : levels)
                for (int seed : cfg_.seeds) {
                    const auto s = ObservationSetting::noise(level);
                    BenchmarkRecord base = stub("noise_sweep", p, c, s, "neural", "", seed);
                    jobs.push_back([this, p, c, s, seed, base] {
                        return guarded(base, [&](BenchmarkRecord& r) {
                            const ClosurePair net = neural(p, c, s, seed)->closure;
                            const auto err = closure_error(true_closure(c), net, support(c, seed));
                            r.err_D = err.err_D;
                            r.err_R = err.err_R;
                            r.weak_loss = weak_loss_of(p, *observed_data(p, c, s, seed), net);
                            r.unseen_roll = unseen_roll(p, c, seed, net);
                        });
                    });
                }
        return run(jobs);
    }

    /// Case Exp on the fine protocol; cross_grid_roll re-simulates on the validation solver from resampled ics.
    std::vector<BenchmarkRecord> run_cross_resolution(const std::vector<std::pair<int, int>>& strides = {{1, 1}, {2, 1}, {1, 2}, {2, 2}}) {
        const Protocol fine = protocol("cross_fine");
        const Protocol val = protocol("cross_validation");
        const CaseId c = CaseId::Exp;
        std::vector<std::function<BenchmarkRecord()>> jobs;
        for (const auto& [sx, st] : strides)
            for (int seed : cfg_.seeds) {
                const auto s = ObservationSetting::strided(sx, st);
                BenchmarkRecord base = stub("cross_resolution", fine, c, s, "neural", "", seed);
                jobs.push_back([this, fine, val, c, s, seed, base] {
                    return guarded(base, [&](BenchmarkRecord& r) {
                        const ClosurePair net = neural(fine, c, s, seed)->closure;
                        const auto err = closure_error(true_closure(c), net, support(c, seed));
                        r.err_D = err.err_D;
                        r.err_R = err.err_R;
                        r.weak_loss = weak_loss_of(fine, *observed_data(fine, c, s, seed), net);
                        const auto ics = unseen_ics(fine, seed);
                        r.unseen_roll = rollout_error(true_closure(c), net, ics, fine.sim()).aggregate;
                        std::vector<State> moved;
                        for (const auto& u : ics) moved.push_back(resample_periodic(u, val.n_x));
                        r.cross_grid_roll = rollout_error(true_closure(c), net, moved, val.sim()).aggregate;
                    });
                });
            }
        return run(jobs);
    }

    std::vector<BenchmarkRecord> run_objective_ablation() {
        const Protocol p = protocol("default");
        const CaseId c = CaseId::Exp;
        const auto s = ObservationSetting::clean();
        std::vector<std::function<BenchmarkRecord()>> jobs;
        for (ObjectiveVariant v : {ObjectiveVariant::weak_only, ObjectiveVariant::no_strong, ObjectiveVariant::full})
            for (int seed : cfg_.seeds) {
                BenchmarkRecord base = stub("objective_ablation", p, c, s, "neural", std::string(to_string(v)), seed);
                jobs.push_back([this, p, c, s, v, seed, base] {
                    return guarded(base, [&](BenchmarkRecord& r) {
                        const ClosurePair net = neural(p, c, s, seed, v)->closure;
                        const auto err = closure_error(true_closure(c), net, support(c, seed));
                        r.err_D = err.err_D;
                        r.err_R = err.err_R;
                        r.weak_loss = weak_loss_of(p, *observed_data(p, c, s, seed), net);
                        r.unseen_roll = unseen_roll(p, c, seed, net);
                    });
                });
            }
        return run(jobs);
    }

private:
    void log(const std::string& msg) const {
        if (!cfg_.log) return;
        std::lock_guard<std::mutex> lock(log_mutex_);
        *cfg_.log << "[closurelab] " << msg << std::endl;
    }

    static BenchmarkRecord stub(const std::string& table, const Protocol& p, CaseId c, const ObservationSetting& s, const std::string& method,
                                const std::string& variant, int seed) {
        BenchmarkRecord r;
        r.table = table;
        r.preset = p.name;
        r.case_name = std::string(to_string(c));
        r.setting = s.name();
        r.method = method;
        r.variant = variant;
        r.seed = seed;
        return r;
    }

    static BenchmarkRecord guarded(BenchmarkRecord base, const std::function<void(BenchmarkRecord&)>& body) {
        BenchmarkRecord r = base;
        try {
            body(r);
        } catch (const std::exception& e) {
            r = base;
            r.status = std::string("failed: ") + e.what();
        }
        return r;
    }

    void fill_bias(BenchmarkRecord& r, const Protocol& p, CaseId c, const ObservationSetting& s, int seed) {
        const auto net = neural(p, c, s, seed);
        const auto sym = symbolic(p, c, s, seed);
        const auto b = bias_inheritance(true_closure(c), net->closure, sym->closure, support(c, seed));
        r.sym_err_D = b.compression_err_D;
        r.sym_err_R = b.compression_err_R;
        r.bir_D = b.bir_D;
        r.bir_R = b.bir_R;
    }

    std::vector<BenchmarkRecord> run(const std::vector<std::function<BenchmarkRecord()>>& jobs) {
        return run_jobs<BenchmarkRecord>(static_cast<int>(jobs.size()), cfg_.workers, [&](int i) { return jobs[static_cast<std::size_t>(i)](); });
    }

    HarnessConfig cfg_;
    LossWeights full_weights_;
    Memo<std::vector<Trajectory>> data_;
    Memo<NeuralFit> neural_;
    Memo<SymbolicFit> symbolic_;
    Memo<PolyClosure> baseline_;
    mutable std::mutex log_mutex_;
};

}  // namespace closurelab
