#include <catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "closurelab/harness.hpp"
#include "properties.hpp"

using namespace closurelab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

Overrides small_overrides() {
    std::istringstream in("epochs = 2\nn_train = 2\nn_unseen = 1\nT = 0.02\n");
    return parse_config(in);
}

BenchmarkRecord record(const std::string& kcase, int seed, double errD) {
    BenchmarkRecord r;
    r.table = "t";
    r.preset = "default";
    r.case_name = kcase;
    r.setting = "clean";
    r.method = "weak_poly";
    r.seed = seed;
    r.err_D = errD;
    r.err_R = 2.0 * errD;
    r.weak_loss = 0.0;
    r.unseen_roll = 0.0;
    return r;
}
}  // namespace

TEST_CASE("observation setting names") {
    CHECK(ObservationSetting::clean().name() == "clean");
    CHECK(ObservationSetting::noise(5).name() == "noise5");
    CHECK(ObservationSetting::noise(0).name() == "clean");
    CHECK(ObservationSetting::sparse().name() == "sparse");
    CHECK(ObservationSetting::strided(2, 1).name() == "stride2_1");
    CHECK(ObservationSetting::combined(5, 2, 2).name() == "noise5_stride2_2");
    for (const char* s : {"clean", "noise5", "noise2.5", "sparse", "stride2_1", "stride1_2", "noise5_stride2_2"}) CHECK(parse_setting(s).name() == s);
    CHECK_THROWS_AS(parse_setting("noisy"), Error);
    CHECK_THROWS_AS(parse_setting("stride0_1"), Error);
    ObservationSetting bad = ObservationSetting::noise(5);
    bad.tag = ObservationSetting::Tag::clean;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("degradation") {
    const Protocol p;
    const auto data = generate_training_data(p, CaseId::A, 0);
    const Trajectory& t = data.front();
    SECTION("clean is the identity") {
        const auto d = degrade(t, ObservationSetting::clean(), 3);
        CHECK((d.states - t.states).abs().maxCoeff() == 0.0);
    }
    SECTION("temporal stride keeps the first snapshot") {
        const auto d = degrade(t, ObservationSetting::strided(1, 2), 0);
        CHECK(d.n_snapshots() == 51);
        CHECK_THAT(d.dt_save, WithinRel(2.0 * t.dt_save, 1e-12));
        CHECK((d.snapshot(50) - t.snapshot(100)).abs().maxCoeff() == 0.0);
    }
    SECTION("spatial stride") {
        const auto d = degrade(t, ObservationSetting::strided(2, 1), 0);
        CHECK(d.grid.n_x == 32);
        CHECK(d.states(4, 5) == t.states(4, 10));
        CHECK_THROWS_AS(degrade(t, ObservationSetting::strided(3, 1), 0), Error);
    }
    SECTION("noise level matches the requested fraction") {
        const double mean = t.states.mean(), sd = std::sqrt((t.states - mean).square().mean());
        const Interval open{-1e9, 1e9};
        for (std::uint64_t seed : {0, 1, 2}) {
            const auto d = degrade(t, ObservationSetting::noise(5), seed, open);
            const Snapshots diff = d.states - t.states;
            const double emp = std::sqrt((diff - diff.mean()).square().mean());
            CHECK(std::abs(emp / (0.05 * sd) - 1.0) < 0.1);
        }
    }
    SECTION("noise is reproducible and clipped") {
        const auto a = degrade(t, ObservationSetting::noise(5), 1), b = degrade(t, ObservationSetting::noise(5), 1);
        const auto c = degrade(t, ObservationSetting::noise(5), 2);
        CHECK((a.states - b.states).abs().maxCoeff() == 0.0);
        CHECK((a.states - c.states).abs().maxCoeff() > 0.0);
        CHECK(a.min_state() >= t.min_state());
        CHECK(a.max_state() <= t.max_state());
    }
}

TEST_CASE("periodic resampling") {
    const Grid1D g(64);
    const State u = random_fourier_ic(4, 0.5, 0.4, 3, g);
    CHECK((resample_periodic(u, 64) - u).abs().maxCoeff() < 1e-13);
    const State band = 0.5 + 0.2 * (props::tp * g.centers()).sin() + 0.1 * (3.0 * props::tp * g.centers()).cos();
    const Grid1D h(48);
    const State expect = 0.5 + 0.2 * (props::tp * h.centers()).sin() + 0.1 * (3.0 * props::tp * h.centers()).cos();
    CHECK((resample_periodic(band, 48) - expect).abs().maxCoeff() < 1e-13);
}

TEST_CASE("protocol presets") {
    const Protocol d = preset("default");
    CHECK(d.n_x == 64);
    CHECK(d.T == 0.1);
    CHECK(d.n_train == 8);
    CHECK(d.sim().n_steps() == 1000);
    const Protocol lo = preset("excitation_light_low"), hi = preset("excitation_light_high");
    CHECK(lo.n_x == 48);
    CHECK(lo.ic.amplitude < hi.ic.amplitude);
    CHECK(preset("cross_validation").n_x == 48);
    CHECK(preset("cross_fine").key() != d.key());
    CHECK_THROWS_AS(preset("huge"), Error);
    for (int seed : {0, 1, 2}) {
        for (CaseId c : {CaseId::A, CaseId::B, CaseId::Exp}) {
            CHECK(excitation_diagnostics(generate_training_data(lo, c, seed)).bin_coverage == 0.125);
            CHECK(excitation_diagnostics(generate_training_data(hi, c, seed)).bin_coverage == 1.0);
        }
    }
}

TEST_CASE("configuration overrides") {
    std::istringstream in("# comment\nepochs = 7\nalpha=0.5\n\nic_amplitude = 0.3  # trailing\n");
    const Overrides o = parse_config(in);
    const Protocol p = apply_overrides(preset("default"), o);
    CHECK(p.epochs == 7);
    CHECK(p.ic.amplitude == 0.3);
    CHECK(apply_overrides(LossWeights{}, o).alpha == 0.5);
    std::istringstream bad("nonsense = 1\n");
    CHECK_THROWS_AS(parse_config(bad), Error);
    std::istringstream noeq("epochs 3\n");
    CHECK_THROWS_AS(parse_config(noeq), Error);
    std::istringstream badval("epochs = many\n");
    CHECK_THROWS_AS(apply_overrides(preset("default"), parse_config(badval)), Error);
}

TEST_CASE("data generation") {
    Protocol p;
    p.n_train = 3;
    const auto a = generate_training_data(p, CaseId::B, 4), b = generate_training_data(p, CaseId::B, 4);
    REQUIRE(a.size() == 3);
    CHECK((a[2].states - b[2].states).abs().maxCoeff() == 0.0);
    CHECK(a[0].seed == training_ic_seed(4, 0));
    const auto u = unseen_ics(p, 4);
    CHECK(u.size() == 4);
    CHECK((u[0] - a[0].snapshot(0)).abs().maxCoeff() > 0.0);
    const Interval r = dataset_range(a);
    CHECK(r.lo < r.hi);
}

TEST_CASE("csv schemas match the golden headers") {
    const std::string dir = CLOSURELAB_GOLDEN_DIR;
    CHECK(harness_detail::join(runs_header()) == read_file(dir + "/runs_header.csv"));
    CHECK(harness_detail::join(aggregate_header()) == read_file(dir + "/aggregate_header.csv"));
    std::ostringstream os;
    write_runs_csv(os, {record("A", 0, 0.5)});
    std::istringstream back(os.str());
    const CsvTable t = read_csv(back);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.number(0, t.require_column("ErrD")) == 0.5);
    CHECK(t.rows[0][static_cast<std::size_t>(t.require_column("BIR_D"))].empty());
}

TEST_CASE("aggregation") {
    SECTION("mean and sample standard deviation") {
        const auto rows = aggregate({record("A", 0, 1.0), record("A", 1, 2.0), record("A", 2, 3.0), record("B", 0, 4.0)});
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].n_seeds == 3);
        CHECK_THAT(*rows[0].mean[0], WithinAbs(2.0, 1e-15));
        CHECK_THAT(*rows[0].std[0], WithinAbs(1.0, 1e-15));
        CHECK(*rows[1].mean[0] == 4.0);
        CHECK(*rows[1].std[0] == 0.0);
        CHECK_FALSE(rows[0].mean[4].has_value());
    }
    SECTION("failed seeds are counted and excluded") {
        BenchmarkRecord bad = record("A", 1, 100.0);
        bad.status = "failed: boom";
        const auto rows = aggregate({record("A", 0, 1.0), bad, record("A", 2, 3.0)});
        CHECK(rows[0].n_failed == 1);
        CHECK(rows[0].n_seeds == 3);
        CHECK_THAT(*rows[0].mean[0], WithinAbs(2.0, 1e-15));
    }
    SECTION("non-finite value") {
        const auto rows = aggregate({record("A", 0, 1.0), record("A", 1, std::numeric_limits<double>::infinity())});
        CHECK(std::isinf(*rows[0].mean[0]));
        CHECK(std::isnan(*rows[0].std[0]));
    }
}

TEST_CASE("job pool and memo") {
    const auto out = run_jobs<int>(50, 4, [](int i) { return i * i; });
    REQUIRE(out.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(out[static_cast<std::size_t>(i)] == i * i);

    Memo<int> memo;
    std::atomic<int> calls{0};
    const auto vals = run_jobs<int>(16, 4, [&](int i) { return *memo.get(i % 2 ? "odd" : "even", [&] { ++calls; return i % 2; }); });
    CHECK(calls == 2);
    CHECK(memo.size() == 2);
    for (int i = 0; i < 16; ++i) CHECK(vals[static_cast<std::size_t>(i)] == i % 2);
    CHECK_THROWS(memo.get("bad", []() -> int { throw Error("x"); }));
}

TEST_CASE("runners") {
    HarnessConfig cfg;
    cfg.seeds = {0};
    cfg.overrides = small_overrides();
    Harness h(cfg);

    SECTION("failed cells are recorded and the run continues") {
        const auto rows = h.run_baseline_map({CaseId::A}, {ObservationSetting::clean(), ObservationSetting::strided(3, 1)}, {Method::weak_poly});
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].ok());
        CHECK(rows[1].status.starts_with("failed: "));
        CHECK_FALSE(all_ok(rows));
    }
    SECTION("same cell agrees across tables and fresh harnesses") {
        const auto map = h.run_baseline_map({CaseId::A}, {ObservationSetting::clean()}, {Method::neural, Method::strong_poly});
        Harness fresh(cfg);
        const auto sweep = fresh.run_noise_sweep({CaseId::A}, {0.0});
        REQUIRE(map.size() == 2);
        REQUIRE(sweep.size() == 1);
        CHECK(map[0].ok());
        CHECK(map[0].err_D == sweep[0].err_D);
        CHECK(map[0].err_R == sweep[0].err_R);
        CHECK(map[0].unseen_roll == sweep[0].unseen_roll);
        Harness again(cfg);
        CHECK(format_run_row(again.run_baseline_map({CaseId::A}, {ObservationSetting::clean()}, {Method::strong_poly})[0]) == format_run_row(map[1]));
    }
    SECTION("symbolic summary fills the bias columns") {
        const auto rows = h.run_symbolic_summary({CaseId::A}, {ObservationSetting::clean()});
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].ok());
        CHECK(rows[0].method == "neural+symbolic");
        CHECK(rows[0].sym_err_D.has_value());
        CHECK(rows[0].bir_R.has_value());
    }
    SECTION("write table produces both files") {
        const auto rows = h.run_baseline_map({CaseId::B}, {ObservationSetting::clean()}, {Method::weak_poly});
        const std::string dir = "harness_test_out";
        std::filesystem::create_directories(dir);
        write_table(dir, "unit_table", rows);
        const CsvTable runs = read_csv_file(dir + "/unit_table_runs.csv");
        const CsvTable agg = read_csv_file(dir + "/unit_table.csv");
        CHECK(runs.rows.size() == 1);
        CHECK(agg.header == aggregate_header());
    }
}

TEST_CASE("harness validation") {
    HarnessConfig cfg;
    cfg.seeds.clear();
    CHECK_THROWS_AS(Harness(cfg), Error);
    CHECK(parse_method("neural+symbolic") == Method::neural_symbolic);
    CHECK_THROWS_AS(parse_method("magic"), Error);
}
