#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "closurelab/error.hpp"
#include "closurelab/pde.hpp"

namespace closurelab {

/// Fixed-format number for CSV cells: 10 significant decimals in exponent form, "inf"/"-inf"/"nan" otherwise.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10e", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

/// A header-plus-rows CSV held as strings.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
    int require_column(const std::string& name) const {
        const int c = column(name);
        if (c < 0) throw SchemaError("CSV is missing required column '" + name + "'");
        return c;
    }
    /// Numeric cell; empty cells read as NaN.
    double number(std::size_t row, int col) const {
        const std::string& s = rows.at(row).at(static_cast<std::size_t>(col));
        if (s.empty()) return std::nan("");
        return std::strtod(s.c_str(), nullptr);
    }
};

inline CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (t.header.empty()) {
            t.header = split_csv_line(line);
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size()) throw SchemaError("CSV row has " + std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_csv(in);
}

/// Metadata carried by a trajectory dataset file.
struct DatasetMeta {
    std::map<std::string, std::string> fields;

    std::string get(const std::string& k, const std::string& fallback = "") const {
        auto it = fields.find(k);
        return it == fields.end() ? fallback : it->second;
    }
};

/// Dataset CSV: "# key=value" metadata lines, then columns traj,snapshot,time,u0..u{n_x-1}.
inline void write_dataset(std::ostream& os, const std::vector<Trajectory>& trajs, const DatasetMeta& meta) {
    if (trajs.empty()) throw Error("write_dataset: no trajectories");
    os << "# closurelab dataset 1\n";
    for (const auto& [k, v] : meta.fields) os << "# " << k << '=' << v << '\n';
    os << "# dt_save=" << format_number(trajs.front().dt_save) << '\n';
    const int nx = trajs.front().grid.n_x;
    os << "traj,snapshot,time";
    for (int i = 0; i < nx; ++i) os << ",u" << i;
    os << '\n';
    char buf[40];
    for (std::size_t m = 0; m < trajs.size(); ++m) {
        const auto& t = trajs[m];
        if (t.grid.n_x != nx) throw Error("write_dataset: trajectories must share the grid");
        for (int n = 0; n < t.n_snapshots(); ++n) {
            os << m << ',' << n << ',' << format_number(t.time(n));
            for (int i = 0; i < nx; ++i) {
                std::snprintf(buf, sizeof buf, ",%.17g", t.states(n, i));
                os << buf;
            }
            os << '\n';
        }
    }
}

inline std::vector<Trajectory> read_dataset(std::istream& is, DatasetMeta* meta = nullptr) {
    std::string line;
    DatasetMeta m;
    std::vector<std::string> header;
    std::vector<std::vector<std::vector<double>>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos) m.fields[line.substr(2, eq - 2)] = line.substr(eq + 1);
            continue;
        }
        if (header.empty()) {
            header = split_csv_line(line);
            if (header.size() < 4 || header[0] != "traj" || header[1] != "snapshot" || header[2] != "time")
                throw SchemaError("dataset: expected columns traj,snapshot,time,u0,...");
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) throw SchemaError("dataset: ragged row");
        const auto traj = static_cast<std::size_t>(std::stoul(cells[0]));
        if (traj >= rows.size()) rows.resize(traj + 1);
        std::vector<double> u(cells.size() - 3);
        for (std::size_t i = 3; i < cells.size(); ++i) u[i - 3] = std::strtod(cells[i].c_str(), nullptr);
        rows[traj].push_back(std::move(u));
    }
    if (rows.empty()) throw SchemaError("dataset: no rows");
    const double dt_save = std::strtod(m.get("dt_save", "0").c_str(), nullptr);
    if (!(dt_save > 0.0)) throw SchemaError("dataset: missing dt_save metadata");
    const int nx = static_cast<int>(header.size()) - 3;
    std::vector<Trajectory> out;
    for (const auto& r : rows) {
        Trajectory t;
        t.grid = Grid1D(nx);
        t.dt_save = dt_save;
        t.states.resize(static_cast<Eigen::Index>(r.size()), nx);
        for (std::size_t n = 0; n < r.size(); ++n)
            for (int i = 0; i < nx; ++i) t.states(static_cast<Eigen::Index>(n), i) = r[n][static_cast<std::size_t>(i)];
        out.push_back(std::move(t));
    }
    if (meta) *meta = m;
    return out;
}

}  // namespace closurelab
