#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "closurelab/error.hpp"
#include "closurelab/io.hpp"

namespace closurelab {

/// Minimal SVG canvas with one or more log-y panels laid out horizontally.
class SvgCanvas {
public:
    SvgCanvas(double width, double height) : w_(width), h_(height) {}

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0, const std::string& dash = "") {
        body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke
              << "\" stroke-width=\"" << num(width) << "\"";
        if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
        body_ << "/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill, double opacity = 1.0) {
        body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"" << fill
              << "\" fill-opacity=\"" << num(opacity) << "\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& fill) {
        body_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill << "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5) {
        body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\" points=\"";
        for (const auto& [x, y] : pts) body_ << num(x) << ',' << num(y) << ' ';
        body_ << "\"/>\n";
    }
    void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& fill, double opacity) {
        body_ << "<polygon fill=\"" << fill << "\" fill-opacity=\"" << num(opacity) << "\" stroke=\"none\" points=\"";
        for (const auto& [x, y] : pts) body_ << num(x) << ',' << num(y) << ' ';
        body_ << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, double size = 11.0, const std::string& anchor = "middle") {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size) << "\" font-family=\"sans-serif\" text-anchor=\""
              << anchor << "\">" << escape(s) << "</text>\n";
    }

    std::string str() const {
        std::ostringstream os;
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_) << "\" viewBox=\"0 0 " << num(w_) << ' '
           << num(h_) << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
           << body_.str() << "</svg>\n";
        return os.str();
    }

    static std::string num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return buf;
    }

private:
    static std::string escape(const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    }

    double w_, h_;
    std::ostringstream body_;
};

/// Log-y axes box mapping data to pixels.
struct LogPanel {
    double x0, y0, w, h;  // pixel box
    double xmin, xmax, lmin, lmax;  // x range, log10 y range

    double px(double x) const { return x0 + (xmax == xmin ? 0.5 : (x - xmin) / (xmax - xmin)) * w; }
    double py(double y) const {
        const double l = std::log10(std::max(y, 1e-300));
        return y0 + h - (std::clamp(l, lmin, lmax) - lmin) / (lmax - lmin) * h;
    }

    void frame(SvgCanvas& c, const std::string& title, const std::string& ylabel) const {
        c.rect(x0, y0, w, h, "#f7f7f7");
        c.line(x0, y0 + h, x0 + w, y0 + h, "black");
        c.line(x0, y0, x0, y0 + h, "black");
        for (int e = static_cast<int>(std::ceil(lmin)); e <= static_cast<int>(std::floor(lmax)); ++e) {
            const double y = py(std::pow(10.0, e));
            c.line(x0, y, x0 + w, y, "#dddddd", 0.5);
            c.text(x0 - 4, y + 4, "1e" + std::to_string(e), 9, "end");
        }
        c.text(x0 + w / 2, y0 - 8, title, 12);
        c.text(x0 - 40, y0 + h / 2, ylabel, 10);
    }
};

namespace plot_detail {
inline const char* palette(std::size_t i) {
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    return colours[i % 6];
}

inline void require_rows(const CsvTable& t, const std::string& what) {
    if (t.header.empty() || t.rows.empty()) throw Error(what + ": empty CSV, nothing to plot");
}

/// log10 range covering the positive finite values, padded to whole decades.
inline std::pair<double, double> log_range(const std::vector<double>& v) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : v)
        if (x > 0.0 && std::isfinite(x)) {
            lo = std::min(lo, std::log10(x));
            hi = std::max(hi, std::log10(x));
        }
    if (!std::isfinite(lo)) return {-3.0, 0.0};
    lo = std::floor(lo);
    hi = std::ceil(hi);
    if (hi <= lo) hi = lo + 1.0;
    return {lo, hi};
}

inline double setting_noise_level(const std::string& s) {
    if (s == "clean") return 0.0;
    if (s.rfind("noise", 0) == 0) return std::strtod(s.c_str() + 5, nullptr);
    throw SchemaError("noise-sweep plot: setting '" + s + "' is not a noise level");
}

inline void write(const std::string& path, const SvgCanvas& c) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    f << c.str();
}
}  // namespace plot_detail

/// One panel per case; ErrD and ErrR means against noise level with mean +/- std bands.
inline SvgCanvas plot_noise_sweep(const CsvTable& t) {
    plot_detail::require_rows(t, "noise-sweep plot");
    const int ccase = t.require_column("case"), cset = t.require_column("setting");
    const std::vector<std::string> metrics = {"ErrD", "ErrR"};
    std::vector<int> cmean, cstd;
    for (const auto& m : metrics) {
        cmean.push_back(t.require_column(m + "_mean"));
        cstd.push_back(t.require_column(m + "_std"));
    }
    std::vector<std::string> cases;
    std::vector<double> all;
    double xmax = 0.0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& c = t.rows[r][static_cast<std::size_t>(ccase)];
        if (std::find(cases.begin(), cases.end(), c) == cases.end()) cases.push_back(c);
        xmax = std::max(xmax, plot_detail::setting_noise_level(t.rows[r][static_cast<std::size_t>(cset)]));
        for (std::size_t k = 0; k < metrics.size(); ++k) {
            const double m = t.number(r, cmean[k]), s = t.number(r, cstd[k]);
            all.push_back(m);
            if (std::isfinite(s)) {
                all.push_back(m + s);
                all.push_back(m - s);
            }
        }
    }
    const auto [lmin, lmax] = plot_detail::log_range(all);
    const double pw = 260, ph = 220, margin = 60;
    SvgCanvas svg(margin + cases.size() * (pw + margin), ph + 110);
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        LogPanel p{margin + ci * (pw + margin), 40, pw, ph, 0.0, std::max(xmax, 1.0), lmin, lmax};
        p.frame(svg, "Case " + cases[ci], "error");
        for (std::size_t k = 0; k < metrics.size(); ++k) {
            std::vector<std::pair<double, double>> pts, upper, lower;
            std::vector<std::pair<double, double>> raw;
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                if (t.rows[r][static_cast<std::size_t>(ccase)] != cases[ci]) continue;
                raw.push_back({plot_detail::setting_noise_level(t.rows[r][static_cast<std::size_t>(cset)]), static_cast<double>(r)});
            }
            std::sort(raw.begin(), raw.end());
            for (const auto& [x, rr] : raw) {
                const auto r = static_cast<std::size_t>(rr);
                const double m = t.number(r, cmean[k]);
                double s = t.number(r, cstd[k]);
                if (!std::isfinite(s)) s = 0.0;
                pts.push_back({p.px(x), p.py(m)});
                upper.push_back({p.px(x), p.py(m + s)});
                lower.push_back({p.px(x), p.py(std::max(m - s, m * 1e-3))});
            }
            std::vector<std::pair<double, double>> band = upper;
            band.insert(band.end(), lower.rbegin(), lower.rend());
            svg.polygon(band, plot_detail::palette(k), 0.2);
            svg.polyline(pts, plot_detail::palette(k));
            for (const auto& [x, y] : pts) svg.circle(x, y, 2.5, plot_detail::palette(k));
        }
        for (double x = 0; x <= std::max(xmax, 1.0) + 1e-9; x += 1.0) svg.text(p.px(x), p.y0 + p.h + 14, SvgCanvas::num(x).substr(0, 3), 9);
        svg.text(p.x0 + p.w / 2, p.y0 + p.h + 30, "noise level (%)", 10);
    }
    for (std::size_t k = 0; k < metrics.size(); ++k) {
        svg.rect(margin + 120 * k, ph + 90, 12, 12, plot_detail::palette(k));
        svg.text(margin + 120 * k + 18, ph + 100, metrics[k] + " mean +/- std", 10, "start");
    }
    return svg;
}

/// Grouped log-scale bars per table row, one bar per named column.
inline SvgCanvas plot_grouped_bars(const std::vector<std::string>& labels, const std::vector<std::string>& series,
                                   const std::vector<std::vector<double>>& values, const std::string& title, const std::string& ylabel,
                                   std::optional<double> reference = std::nullopt, bool log_scale = true) {
    if (labels.empty()) throw Error("bar plot: nothing to plot");
    std::vector<double> all;
    for (const auto& row : values) all.insert(all.end(), row.begin(), row.end());
    if (reference) all.push_back(*reference);
    double lmin, lmax;
    if (log_scale) {
        std::tie(lmin, lmax) = plot_detail::log_range(all);
    } else {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (double x : all)
            if (std::isfinite(x)) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
        const double pad = std::max(0.05 * (hi - lo), 0.05);
        lmin = lo - pad;
        lmax = hi + pad;
    }
    const double group = 26.0 * series.size() + 30.0, margin = 70, ph = 260;
    SvgCanvas svg(margin * 2 + group * labels.size(), ph + 150);
    LogPanel p{margin, 40, group * labels.size(), ph, 0.0, 1.0, lmin, lmax};
    auto ypix = [&](double v) {
        if (log_scale) return p.py(v);
        return p.y0 + p.h - (std::clamp(v, lmin, lmax) - lmin) / (lmax - lmin) * p.h;
    };
    if (log_scale) {
        p.frame(svg, title, ylabel);
    } else {
        svg.rect(p.x0, p.y0, p.w, p.h, "#f7f7f7");
        svg.line(p.x0, p.y0 + p.h, p.x0 + p.w, p.y0 + p.h, "black");
        svg.line(p.x0, p.y0, p.x0, p.y0 + p.h, "black");
        for (int k = 0; k <= 4; ++k) {
            const double v = lmin + (lmax - lmin) * k / 4.0;
            svg.text(p.x0 - 4, ypix(v) + 4, SvgCanvas::num(v), 9, "end");
        }
        svg.text(p.x0 + p.w / 2, p.y0 - 8, title, 12);
        svg.text(p.x0 - 45, p.y0 + p.h / 2, ylabel, 10);
    }
    for (std::size_t g = 0; g < labels.size(); ++g) {
        const double gx = p.x0 + g * group + 15;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = values[g][s];
            if (!std::isfinite(v)) continue;
            const double top = ypix(v), base = log_scale ? p.y0 + p.h : ypix(std::clamp(0.0, lmin, lmax));
            svg.rect(gx + 26.0 * s, std::min(top, base), 22, std::abs(base - top), plot_detail::palette(s), 0.85);
        }
        svg.text(gx + 13.0 * series.size(), p.y0 + p.h + 14, labels[g], 9);
    }
    if (reference) svg.line(p.x0, ypix(*reference), p.x0 + p.w, ypix(*reference), "black", 1.2, "6,3");
    for (std::size_t s = 0; s < series.size(); ++s) {
        svg.rect(margin + 170 * s, ph + 110, 12, 12, plot_detail::palette(s));
        svg.text(margin + 170 * s + 18, ph + 120, series[s], 10, "start");
    }
    return svg;
}

namespace plot_detail {
inline std::string row_label(const CsvTable& t, std::size_t r) {
    std::string l = t.rows[r][static_cast<std::size_t>(t.require_column("case"))] + " " + t.rows[r][static_cast<std::size_t>(t.require_column("setting"))];
    const int v = t.column("variant");
    if (v >= 0 && !t.rows[r][static_cast<std::size_t>(v)].empty()) l += " " + t.rows[r][static_cast<std::size_t>(v)];
    return l;
}
}  // namespace plot_detail

/// Stage-1 true error, compression error and Stage-3 true error (BIR x Stage-1) for D and R.
inline SvgCanvas plot_error_propagation(const CsvTable& t) {
    plot_detail::require_rows(t, "error-propagation plot");
    const int eD = t.require_column("ErrD_mean"), eR = t.require_column("ErrR_mean");
    const int sD = t.require_column("sym_surrogate_ErrD_mean"), sR = t.require_column("sym_surrogate_ErrR_mean");
    const int bD = t.require_column("BIR_D_mean"), bR = t.require_column("BIR_R_mean");
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        labels.push_back(plot_detail::row_label(t, r));
        values.push_back({t.number(r, eD), t.number(r, sD), t.number(r, bD) * t.number(r, eD), t.number(r, eR), t.number(r, sR),
                          t.number(r, bR) * t.number(r, eR)});
    }
    return plot_grouped_bars(labels, {"D stage-1 true", "D compression", "D stage-3 true", "R stage-1 true", "R compression", "R stage-3 true"},
                             values, "Error propagation", "relative L2 error");
}

/// BIR_D and BIR_R per cell with a dashed reference at 1.
inline SvgCanvas plot_bir(const CsvTable& t) {
    plot_detail::require_rows(t, "BIR plot");
    const int bD = t.require_column("BIR_D_mean"), bR = t.require_column("BIR_R_mean");
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        labels.push_back(plot_detail::row_label(t, r));
        values.push_back({t.number(r, bD), t.number(r, bR)});
    }
    return plot_grouped_bars(labels, {"BIR_D", "BIR_R"}, values, "Bias inheritance ratio", "BIR", 1.0, false);
}

/// Unseen rollout error per row, plus cross-grid rollout when the column is populated.
inline SvgCanvas plot_rollout(const CsvTable& t) {
    plot_detail::require_rows(t, "rollout plot");
    const int u = t.require_column("unseen_roll_mean");
    const int x = t.column("cross_grid_roll_mean");
    const int m = t.column("method");
    bool has_cross = false;
    if (x >= 0)
        for (std::size_t r = 0; r < t.rows.size(); ++r) has_cross = has_cross || !t.rows[r][static_cast<std::size_t>(x)].empty();
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        std::string l = plot_detail::row_label(t, r);
        if (m >= 0) l += " " + t.rows[r][static_cast<std::size_t>(m)];
        labels.push_back(l);
        std::vector<double> v = {t.number(r, u)};
        if (has_cross) v.push_back(t.number(r, x));
        values.push_back(v);
    }
    std::vector<std::string> series = {"same-grid unseen rollout"};
    if (has_cross) series.push_back("cross-grid unseen rollout");
    return plot_grouped_bars(labels, series, values, "Unseen rollout error", "rollout error");
}

enum class PlotKind { noise_sweep, error_propagation, bir, rollout };

inline PlotKind parse_plot_kind(const std::string& s) {
    if (s == "noise-sweep") return PlotKind::noise_sweep;
    if (s == "error-propagation") return PlotKind::error_propagation;
    if (s == "bir") return PlotKind::bir;
    if (s == "rollout") return PlotKind::rollout;
    throw Error("unknown plot kind '" + s + "' (noise-sweep, error-propagation, bir, rollout)");
}

inline void emit_plot(PlotKind kind, const std::string& csv_path, const std::string& svg_path) {
    const CsvTable t = read_csv_file(csv_path);
    switch (kind) {
        case PlotKind::noise_sweep: plot_detail::write(svg_path, plot_noise_sweep(t)); break;
        case PlotKind::error_propagation: plot_detail::write(svg_path, plot_error_propagation(t)); break;
        case PlotKind::bir: plot_detail::write(svg_path, plot_bir(t)); break;
        case PlotKind::rollout: plot_detail::write(svg_path, plot_rollout(t)); break;
    }
}

}  // namespace closurelab
