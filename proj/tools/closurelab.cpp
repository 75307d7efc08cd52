#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "closurelab/harness.hpp"
#include "closurelab/io.hpp"
#include "closurelab/plot.hpp"

using namespace closurelab;

namespace {

struct Globals {
    std::vector<std::string> cases;
    std::vector<std::string> settings;
    std::vector<int> seeds;
    std::string protocol = "default";
    std::string out_dir = "results";
    std::string config;
    std::vector<std::string> sets;
    int epochs = -1;
    int workers = 0;
    bool quiet = false;
};

std::vector<CaseId> cases_of(const Globals& g, std::vector<CaseId> fallback) {
    if (g.cases.empty()) return fallback;
    std::vector<CaseId> out;
    for (const auto& c : g.cases) out.push_back(parse_case(c));
    return out;
}

std::vector<ObservationSetting> settings_of(const Globals& g, std::vector<ObservationSetting> fallback) {
    if (g.settings.empty()) return fallback;
    std::vector<ObservationSetting> out;
    for (const auto& s : g.settings) out.push_back(parse_setting(s));
    return out;
}

Harness make_harness(const Globals& g) {
    HarnessConfig cfg;
    if (!g.config.empty()) cfg.overrides = load_config(g.config);
    for (const auto& kv : g.sets) {
        std::istringstream line(kv);
        cfg.overrides.merge(parse_config(line, "--set"));
    }
    if (g.epochs >= 0) cfg.overrides.set("epochs", std::to_string(g.epochs));
    if (auto it = cfg.overrides.values.find("workers"); it != cfg.overrides.values.end()) {
        cfg.workers = std::stoi(it->second);
        cfg.overrides.values.erase(it);
    }
    if (g.workers > 0) cfg.workers = g.workers;
    if (!g.seeds.empty()) cfg.seeds = g.seeds;
    if (!g.quiet) cfg.log = &std::cerr;
    return Harness(cfg);
}

std::string out_path(const Globals& g, const std::string& file) {
    std::filesystem::create_directories(g.out_dir);
    return (std::filesystem::path(g.out_dir) / file).string();
}

int finish(const Globals& g, const std::string& table, const std::vector<BenchmarkRecord>& records) {
    std::filesystem::create_directories(g.out_dir);
    write_table(g.out_dir, table, records);
    write_aggregate_csv(std::cout, aggregate(records));
    int failed = 0;
    for (const auto& r : records)
        if (!r.ok()) {
            ++failed;
            std::cerr << "failed cell: " << r.case_name << ' ' << r.setting << ' ' << r.method << ' ' << r.variant << " seed " << r.seed << ": "
                      << r.status << '\n';
        }
    std::cerr << "wrote " << g.out_dir << '/' << table << ".csv and " << table << "_runs.csv (" << records.size() << " rows, " << failed
              << " failed)\n";
    return failed == 0 ? 0 : 1;
}

std::string cell_name(CaseId c, const ObservationSetting& s, int seed) {
    return std::string(to_string(c)) + "_" + s.name() + "_seed" + std::to_string(seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"closurelab: closure identification benchmarks for 1D reaction-diffusion"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--case", g.cases, "Cases (A, B, Exp); repeat or comma-separate")->delimiter(',');
    app.add_option("--setting", g.settings, "Observation settings (clean, noise5, sparse, stride2_1, noise5_stride2_2)")->delimiter(',');
    app.add_option("--seeds", g.seeds, "Seeds; repeat or comma-separate")->delimiter(',');
    app.add_option("--protocol", g.protocol, "Protocol preset for single-step commands");
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_option("--config", g.config, "key = value file with protocol and loss-weight fields");
    app.add_option("--set", g.sets, "Override one config key (key=value); repeatable");
    app.add_option("--epochs", g.epochs, "Training epochs override");
    app.add_option("--workers", g.workers, "Worker threads");
    app.add_flag("--quiet", g.quiet, "No progress log");

    auto* simulate_cmd = app.add_subcommand("simulate", "Generate (and degrade) training datasets");

    std::string method = "weak_poly";
    auto* fit_cmd = app.add_subcommand("fit-baseline", "Fit a polynomial baseline and score it");
    fit_cmd->add_option("--method", method, "strong_poly or weak_poly")->check(CLI::IsMember({"strong_poly", "weak_poly"}));

    std::string variant = "full";
    auto* train_cmd = app.add_subcommand("train-surrogate", "Train the neural surrogate; writes checkpoints and loss histories");
    train_cmd->add_option("--variant", variant, "weak_only, no_strong or full")->check(CLI::IsMember({"weak_only", "no_strong", "full"}));

    std::string checkpoint;
    auto* compress_cmd = app.add_subcommand("compress", "Symbolic compression of a trained surrogate");
    compress_cmd->add_option("--checkpoint", checkpoint, "Surrogate checkpoint (default: train one)");

    auto* validate_cmd = app.add_subcommand("validate", "Unseen rollout of a surrogate against the true closure");
    validate_cmd->add_option("--checkpoint", checkpoint, "Surrogate checkpoint (default: train one)");

    auto* bench_map = app.add_subcommand("bench-baseline-map", "Baseline comparison table");
    std::vector<std::string> methods;
    bench_map->add_option("--method", methods, "Methods (strong_poly, weak_poly, neural, neural+symbolic)")->delimiter(',');
    auto* bench_exc = app.add_subcommand("bench-excitation", "Excitation table");
    auto* bench_sym = app.add_subcommand("bench-symbolic", "Symbolic compression summary");
    auto* bench_noise = app.add_subcommand("bench-noise-sweep", "Neural errors against observation noise");
    std::vector<double> levels = {0, 1, 2, 3, 4, 5};
    bench_noise->add_option("--levels", levels, "Noise levels in percent")->delimiter(',');
    auto* bench_cross = app.add_subcommand("bench-cross-resolution", "Cross-resolution rollout table");
    auto* bench_abl = app.add_subcommand("bench-ablation", "Objective ablation");

    std::string plot_kind, plot_in, plot_out;
    auto* plot_cmd = app.add_subcommand("plot", "Render an SVG from a table CSV");
    plot_cmd->add_option("--kind", plot_kind, "noise-sweep, error-propagation, bir or rollout")->required();
    plot_cmd->add_option("--input", plot_in, "Aggregated table CSV")->required();
    plot_cmd->add_option("--output", plot_out, "SVG path")->required();

    CLI11_PARSE(app, argc, argv);

    const std::vector<CaseId> all_cases = {CaseId::A, CaseId::B, CaseId::Exp};
    try {
        if (*plot_cmd) {
            emit_plot(parse_plot_kind(plot_kind), plot_in, plot_out);
            std::cerr << "wrote " << plot_out << '\n';
            return 0;
        }
        Harness h = make_harness(g);
        const Protocol p = h.protocol(g.protocol);

        if (*simulate_cmd) {
            for (CaseId c : cases_of(g, {CaseId::A}))
                for (const auto& s : settings_of(g, {ObservationSetting::clean()}))
                    for (int seed : h.config().seeds) {
                        DatasetMeta meta;
                        meta.fields = {{"case", std::string(to_string(c))}, {"setting", s.name()}, {"seed", std::to_string(seed)}, {"preset", p.name}};
                        const std::string path = out_path(g, "dataset_" + cell_name(c, s, seed) + ".csv");
                        std::ofstream f(path);
                        write_dataset(f, *h.observed_data(p, c, s, seed), meta);
                        std::cerr << "wrote " << path << '\n';
                    }
            return 0;
        }
        if (*fit_cmd) {
            const Method m = parse_method(method);
            const auto cases = cases_of(g, {CaseId::A});
            const auto settings = settings_of(g, {ObservationSetting::clean()});
            for (CaseId c : cases)
                for (const auto& s : settings)
                    for (int seed : h.config().seeds) {
                        std::ofstream f(out_path(g, "coefficients_" + method + "_" + cell_name(c, s, seed) + ".csv"));
                        h.baseline(p, c, s, seed, m)->write_csv(f);
                    }
            return finish(g, "fit_baseline", h.run_baseline_map(cases, settings, {m}, g.protocol));
        }
        auto surrogate_for = [&](CaseId c, const ObservationSetting& s, int seed) -> ClosurePair {
            if (!checkpoint.empty()) {
                std::ifstream f(checkpoint);
                if (!f) throw Error("cannot open checkpoint '" + checkpoint + "'");
                return to_closure(SurrogateParams::read(f));
            }
            return h.neural(p, c, s, seed, parse_objective_variant(variant))->closure;
        };
        if (*train_cmd) {
            const ObjectiveVariant v = parse_objective_variant(variant);
            std::vector<BenchmarkRecord> records;
            for (CaseId c : cases_of(g, {CaseId::A}))
                for (const auto& s : settings_of(g, {ObservationSetting::clean()}))
                    for (int seed : h.config().seeds) {
                        BenchmarkRecord r;
                        r.table = "train_surrogate";
                        r.preset = p.name;
                        r.case_name = std::string(to_string(c));
                        r.setting = s.name();
                        r.method = "neural";
                        r.variant = variant;
                        r.seed = seed;
                        try {
                            const auto fit = h.neural(p, c, s, seed, v);
                            const std::string stem = cell_name(c, s, seed) + "_" + variant;
                            std::ofstream ck(out_path(g, "surrogate_" + stem + ".txt"));
                            fit->params.write(ck);
                            std::ofstream hist(out_path(g, "loss_history_" + stem + ".csv"));
                            write_loss_history_csv(hist, fit->history);
                            const auto err = closure_error(true_closure(c), fit->closure, h.support(c, seed));
                            r.err_D = err.err_D;
                            r.err_R = err.err_R;
                            r.weak_loss = h.weak_loss_of(p, *h.observed_data(p, c, s, seed), fit->closure);
                            r.unseen_roll = h.unseen_roll(p, c, seed, fit->closure);
                        } catch (const std::exception& e) {
                            r.status = std::string("failed: ") + e.what();
                        }
                        records.push_back(r);
                    }
            return finish(g, "train_surrogate", records);
        }
        if (*compress_cmd) {
            for (CaseId c : cases_of(g, {CaseId::A}))
                for (const auto& s : settings_of(g, {ObservationSetting::clean()}))
                    for (int seed : h.config().seeds) {
                        const ClosurePair net = surrogate_for(c, s, seed);
                        const Interval sup = h.support(c, seed);
                        const SymbolicPair sym = compress(net, sup.lo, sup.hi, {}, kSupportPoints, static_cast<std::uint64_t>(seed));
                        const std::string path = out_path(g, "symbolic_" + cell_name(c, s, seed) + ".txt");
                        std::ofstream f(path);
                        sym.write(f);
                        const auto b = bias_inheritance(true_closure(c), net, sym.to_closure(), sup);
                        std::cout << to_string(c) << ' ' << s.name() << " seed " << seed << "\n  D = " << sym.D.formula() << "\n  R = " << sym.R.formula()
                                  << "\n  BIR_D = " << format_optional(b.bir_D) << "  BIR_R = " << format_optional(b.bir_R) << '\n';
                    }
            return 0;
        }
        if (*validate_cmd) {
            std::ofstream f(out_path(g, "validate.csv"));
            f << "case,setting,seed,ic,rollout_error,blew_up\n";
            bool ok = true;
            for (CaseId c : cases_of(g, {CaseId::A}))
                for (const auto& s : settings_of(g, {ObservationSetting::clean()}))
                    for (int seed : h.config().seeds) {
                        const auto rep = rollout_error(true_closure(c), surrogate_for(c, s, seed), unseen_ics(p, seed), p.sim());
                        for (std::size_t j = 0; j < rep.per_ic.size(); ++j)
                            f << to_string(c) << ',' << s.name() << ',' << seed << ',' << j << ',' << format_number(rep.per_ic[j]) << ','
                              << (rep.blew_up[j] ? 1 : 0) << '\n';
                        std::cout << to_string(c) << ' ' << s.name() << " seed " << seed << " unseen rollout " << format_number(rep.aggregate) << '\n';
                        ok = ok && !rep.any_blow_up();
                    }
            return ok ? 0 : 1;
        }
        if (*bench_map) {
            std::vector<Method> ms;
            for (const auto& m : methods) ms.push_back(parse_method(m));
            if (ms.empty()) ms = {Method::strong_poly, Method::weak_poly, Method::neural, Method::neural_symbolic};
            return finish(g, "baseline_map", h.run_baseline_map(cases_of(g, all_cases), settings_of(g, {ObservationSetting::clean()}), ms));
        }
        if (*bench_exc) return finish(g, "excitation", h.run_excitation(cases_of(g, all_cases)));
        if (*bench_sym)
            return finish(g, "symbolic_summary",
                          h.run_symbolic_summary(cases_of(g, all_cases), settings_of(g, {ObservationSetting::clean(), ObservationSetting::noise(5),
                                                                                          ObservationSetting::sparse()})));
        if (*bench_noise) return finish(g, "noise_sweep", h.run_noise_sweep(cases_of(g, all_cases), levels));
        if (*bench_cross) return finish(g, "cross_resolution", h.run_cross_resolution());
        if (*bench_abl) return finish(g, "objective_ablation", h.run_objective_ablation());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
