// ofcbf: run, bound, sweep, grid and validate scenarios from the command line.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ofcbf/artifacts.hpp"
#include "ofcbf/config.hpp"

namespace {

using namespace ofcbf;
namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::string preset;
    std::vector<std::string> overrides;
    std::optional<std::size_t> trials;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    bool log_traj = false;
    bool timing = false;
    bool dump = false;
    unsigned workers = 0;
};

config::ScenarioConfig load(const Options& o) {
    if (!o.config_path.empty() && !o.preset.empty()) {
        throw ConfigError("give either a config file or --preset, not both");
    }
    if (o.config_path.empty() && o.preset.empty()) {
        throw ConfigError("no scenario: pass a config file or --preset NAME");
    }
    config::Document doc = o.preset.empty() ? config::load_document(o.config_path)
                                            : config::parse_document(config::preset_text(o.preset));
    for (const auto& s : o.overrides) config::apply_override(doc, s);
    auto cfg = config::build(doc);
    if (o.trials) cfg.trials = *o.trials;
    if (o.seed) cfg.master_seed = *o.seed;
    if (o.log_traj) cfg.log_trajectories = true;
    if (cfg.trials < 1) throw ConfigError("--trials must be at least 1");
    return cfg;
}

BatchOptions batch_options(const Options& o, const config::ScenarioConfig& cfg) {
    BatchOptions b;
    b.workers = o.workers;
    b.log_trajectories = cfg.log_trajectories;
    return b;
}

void report(const std::string& what, const fs::path& p) {
    std::cerr << what << ": " << p.string() << "\n";
}

int cmd_validate(const Options& o) {
    const auto cfg = load(o);
    if (o.dump) {
        std::cout << config::to_text(cfg);
    } else {
        std::cerr << "ok: " << cfg.scenario.name << " (n=" << cfg.scenario.sys.n()
                  << ", m=" << cfg.scenario.sys.m() << ", T=" << cfg.scenario.horizon << ")\n";
    }
    return 0;
}

int cmd_bound(const Options& o) {
    const auto cfg = load(o);
    const auto prep = prepare(cfg.scenario);
    const auto theory =
        theory_bound(cfg.scenario, prep, cfg.scenario.x0, cfg.scenario.initial_estimate());
    artifacts::ensure_dir(o.out);
    const fs::path p = fs::path(o.out) / "summary.json";
    artifacts::write_json(p, artifacts::summary("bound", cfg, prep, theory, nullptr, false));
    std::cout << "p_safe_lower " << artifacts::num(theory.p_safe_lower) << (theory.vacuous ? " (vacuous)" : "")
              << "\n";
    report("wrote", p);
    return 0;
}

int cmd_run(const Options& o) {
    const auto cfg = load(o);
    const auto prep = prepare(cfg.scenario);
    const auto batch = run_batch(cfg.scenario, prep, cfg.trials, cfg.master_seed, batch_options(o, cfg));
    artifacts::ensure_dir(o.out);
    const fs::path dir(o.out);
    artifacts::write_json(dir / "summary.json", artifacts::summary("run", cfg, prep, batch.summary.theory,
                                                                 &batch.summary, o.timing));
    artifacts::write_trials_csv(dir / "trials.csv", batch.trials, o.timing);
    if (cfg.log_trajectories) {
        artifacts::write_traj_csv(dir / "traj.csv", batch.trials, cfg.scenario.sys.n(),
                                  cfg.scenario.sys.m());
    }
    const auto& s = batch.summary;
    std::cout << "p_safe_hat " << artifacts::num(s.p_safe_hat) << " [" << artifacts::num(s.ci95.lo)
              << ", " << artifacts::num(s.ci95.hi) << "]  p_safe_lower "
              << artifacts::num(s.p_safe_theory) << (s.theory.vacuous ? " (vacuous)" : "") << "\n";
    report("wrote", dir);
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto cfg = load(o);
    if (cfg.sweep.alphas.empty() || cfg.sweep.k_Js.empty()) {
        throw ConfigError("sweep needs sweep.alpha and sweep.k_J lists");
    }
    const auto rows = sweep_params(cfg.scenario, cfg.sweep.alphas, cfg.sweep.k_Js, cfg.trials,
                                   cfg.master_seed, batch_options(o, cfg));
    artifacts::ensure_dir(o.out);
    const fs::path p = fs::path(o.out) / "sweep.csv";
    artifacts::write_sweep_csv(p, rows);
    const auto prep = prepare(cfg.scenario);
    artifacts::write_json(fs::path(o.out) / "summary.json",
                          artifacts::summary("sweep", cfg, prep,
                                             theory_bound(cfg.scenario, prep, cfg.scenario.x0,
                                                          cfg.scenario.initial_estimate()),
                                             nullptr, false));
    report("wrote", p);
    return 0;
}

int cmd_grid(const Options& o) {
    const auto cfg = load(o);
    if (cfg.grid.axes.empty()) throw ConfigError("grid needs [grid] axes x1..xn = [lo, hi, count]");
    const auto cells = grid_initial_states(cfg.scenario, cfg.grid.points(), cfg.trials,
                                           cfg.master_seed, batch_options(o, cfg));
    artifacts::ensure_dir(o.out);
    const fs::path p = fs::path(o.out) / "grid.csv";
    artifacts::write_grid_csv(p, cells);
    const auto prep = prepare(cfg.scenario);
    artifacts::write_json(fs::path(o.out) / "summary.json",
                          artifacts::summary("grid", cfg, prep,
                                             theory_bound(cfg.scenario, prep, cfg.scenario.x0,
                                                          cfg.scenario.initial_estimate()),
                                             nullptr, false));
    std::size_t informative = 0, ok = 0;
    for (const auto& c : cells) {
        if (c.vacuous) continue;
        ++informative;
        const double se = std::sqrt(c.p_hat * (1.0 - c.p_hat) / static_cast<double>(cfg.trials));
        ok += c.p_hat >= c.p_theory - 3.0 * se;
    }
    std::cout << "cells " << cells.size() << "  non-vacuous " << informative << "  consistent "
              << ok << "\n";
    report("wrote", p);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Output-feedback stochastic CBF safety filter"};
    app.require_subcommand(1);
    Options o;

    const auto common = [&](CLI::App* sub, bool sim) {
        sub->add_option("config,--config", o.config_path, "scenario config file");
        sub->add_option("--preset", o.preset, "built-in scenario")
            ->check(CLI::IsMember(config::preset_names()));
        sub->add_option("--set", o.overrides, "override, e.g. safety.k_J=0.38")->take_all();
        if (sim) {
            sub->add_option("--trials", o.trials, "Monte Carlo trials");
            sub->add_option("--seed", o.seed, "master seed");
            sub->add_option("--workers", o.workers, "worker threads (0: all cores)");
            sub->add_flag("--timing", o.timing, "record solve times (not reproducible)");
        }
        if (sub->get_name() != "validate") sub->add_option("--out", o.out, "output directory");
    };

    auto* run = app.add_subcommand("run", "simulate trials; writes summary.json, trials.csv");
    common(run, true);
    run->add_flag("--log-traj", o.log_traj, "also write traj.csv");
    auto* bound = app.add_subcommand("bound", "theoretical bound only; writes summary.json");
    common(bound, false);
    auto* sweep = app.add_subcommand("sweep", "(alpha, k_J) sweep; writes sweep.csv");
    common(sweep, true);
    auto* grid = app.add_subcommand("grid", "initial-state lattice; writes grid.csv");
    common(grid, true);
    auto* validate = app.add_subcommand("validate", "check a scenario");
    common(validate, false);
    validate->add_flag("--dump", o.dump, "print the resolved config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*run) return cmd_run(o);
        if (*bound) return cmd_bound(o);
        if (*sweep) return cmd_sweep(o);
        if (*grid) return cmd_grid(o);
        return cmd_validate(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
