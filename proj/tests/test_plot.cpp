#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "closurelab/harness.hpp"
#include "closurelab/plot.hpp"

using namespace closurelab;

namespace {
CsvTable table(const std::string& text) {
    std::istringstream in(text);
    return read_csv(in);
}

std::size_t occurrences(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = s.find(needle); at != std::string::npos; at = s.find(needle, at + 1)) ++n;
    return n;
}

CsvTable sweep_table() {
    std::vector<BenchmarkRecord> rows;
    for (const char* c : {"A", "B", "Exp"})
        for (double level : {0.0, 1.0, 5.0})
            for (int seed : {0, 1}) {
                BenchmarkRecord r;
                r.table = "noise_sweep";
                r.preset = "default";
                r.case_name = c;
                r.setting = ObservationSetting::noise(level).name();
                r.method = "neural";
                r.seed = seed;
                r.err_D = 0.01 * (1.0 + level) * (1.0 + 0.1 * seed);
                r.err_R = 0.02 * (1.0 + level);
                r.weak_loss = 1e-6;
                r.unseen_roll = 1e-3;
                rows.push_back(r);
            }
    std::ostringstream os;
    write_aggregate_csv(os, aggregate(rows));
    return table(os.str());
}
}  // namespace

TEST_CASE("empty input is an error") {
    CHECK_THROWS_AS(plot_noise_sweep(table("")), Error);
    CHECK_THROWS_AS(plot_bir(table("case,setting,BIR_D_mean,BIR_R_mean\n")), Error);
}

TEST_CASE("missing columns raise a schema error") {
    CHECK_THROWS_AS(plot_bir(table("case,setting,ErrD_mean\nA,clean,0.1\n")), SchemaError);
    CHECK_THROWS_AS(plot_rollout(table("case,setting,ErrD_mean\nA,clean,0.1\n")), SchemaError);
    CHECK_THROWS_AS(plot_error_propagation(table("case,setting,ErrD_mean\nA,clean,0.1\n")), SchemaError);
}

TEST_CASE("noise sweep has one panel per case with bands") {
    const std::string svg = plot_noise_sweep(sweep_table()).str();
    CHECK(svg.starts_with("<svg"));
    CHECK(occurrences(svg, "Case ") == 3);
    CHECK(svg.find("<polygon") != std::string::npos);
    CHECK(svg.find("ErrD") != std::string::npos);
}

TEST_CASE("bias ratio plot draws the reference line") {
    const std::string svg = plot_bir(table("case,setting,variant,BIR_D_mean,BIR_R_mean\nA,clean,,1.02,0.97\nExp,noise5,,1.1,1.3\n")).str();
    CHECK(svg.find("stroke-dasharray") != std::string::npos);
    CHECK(svg.find("Exp noise5") != std::string::npos);
}

TEST_CASE("error propagation and rollout plots") {
    const std::string head = "case,setting,method,ErrD_mean,ErrR_mean,sym_surrogate_ErrD_mean,sym_surrogate_ErrR_mean,BIR_D_mean,BIR_R_mean,unseen_roll_mean,cross_grid_roll_mean\n";
    const CsvTable t = table(head + "A,clean,neural,0.01,0.02,0.001,0.002,1.0,1.01,0.003,\nExp,clean,neural,0.02,0.03,0.002,0.001,0.99,1.0,0.004,0.005\n");
    CHECK(plot_error_propagation(t).str().find("stage-3") != std::string::npos);
    CHECK(plot_rollout(t).str().find("cross-grid") != std::string::npos);
}

TEST_CASE("plot kinds and files") {
    CHECK(parse_plot_kind("bir") == PlotKind::bir);
    CHECK_THROWS_AS(parse_plot_kind("pie"), Error);
    const std::string dir = "plot_test_out";
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir + "/bir.csv");
        f << "case,setting,BIR_D_mean,BIR_R_mean\nA,clean,1.0,1.0\n";
    }
    emit_plot(PlotKind::bir, dir + "/bir.csv", dir + "/bir.svg");
    CHECK(std::filesystem::file_size(dir + "/bir.svg") > 100);
    CHECK_THROWS_AS(emit_plot(PlotKind::bir, dir + "/missing.csv", dir + "/x.svg"), Error);
}
