#pragma once

// Run artifacts: summary.json plus fixed-header CSV files.
//
//   trials.csv  trial_id,seed,safe,min_h,exit_step,infeasible_steps,mean_solve_ms
//   traj.csv    trial,k,x1..xn,xh1..xhn,u1..um,h,h_hat
//   sweep.csv   alpha,k_J,cj_min,cj_max_min,delta_min,p_hat,ci_lo,ci_hi,p_theory,p_exit_raw,vacuous,infeasible_steps
//   grid.csv    x0_1,..,x0_n,p_hat,p_theory,vacuous
//
// Reals are written with 17 significant digits. exit_step is empty for safe
// trials; u is empty on the final trajectory row; mean_solve_ms is empty unless
// timing output was requested, so that repeated runs are byte-identical.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofcbf/config.hpp"

namespace ofcbf::artifacts {

using nlohmann::json;

inline std::string num(double v) { return config::format_number(v); }

inline json to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json to_json(const BoundResult& b) {
    return {{"p_exit_raw", b.p_exit_raw},
            {"p_exit", b.p_exit},
            {"p_safe_lower", b.p_safe_lower},
            {"branch", to_string(b.branch)},
            {"vacuous", b.vacuous}};
}

inline json to_json(const MCSummary& s, bool timing) {
    json j = {{"trials", s.trials},
              {"safe", s.safe},
              {"p_safe_hat", s.p_safe_hat},
              {"ci95", {s.ci95.lo, s.ci95.hi}},
              {"exit_step_histogram", s.exit_step_histogram},
              {"infeasible_steps", s.infeasible_steps},
              {"trials_with_infeasible", s.trials_with_infeasible}};
    if (timing) {
        j["solve_ms"] = {{"mean", s.mean_solve_ms},
                         {"p50", s.p50_solve_ms},
                         {"p95", s.p95_solve_ms},
                         {"max", s.max_solve_ms}};
    }
    return j;
}

inline json resolved_parameters(const config::ScenarioConfig& cfg, const Prepared& prep) {
    const Scenario& s = cfg.scenario;
    const auto& pre = prep.pre;
    const auto& cert = prep.cert;
    const bool output = s.params.mode == FeedbackMode::OutputFeedback;
    std::string gamma_mode = "none";
    if (output) {
        gamma_mode = s.gamma_override ? "fixed"
                     : s.gamma_mode == GammaMode::Analytic ? "analytic"
                                                           : "montecarlo";
    }
    json j = {{"mode", output ? "output" : "state"},
              {"alpha", s.params.alpha},
              {"sigma", s.params.sigma},
              {"T", s.horizon},
              {"gamma_mode", gamma_mode},
              {"gamma", pre.shifted.gamma},
              {"h_gamma", pre.shifted.h_gamma},
              {"M", pre.M},
              {"M_eff", output ? pre.M - pre.shifted.h_gamma : pre.M},
              {"lambda_max", pre.lambda_max},
              {"cj_max", cert.cj_max},
              {"cj", cert.cj},
              {"delta_prime", cert.delta},
              {"delta_min", cert.delta_min},
              {"cj_clamped", cert.cj_clamped},
              {"nominal_gain", to_json(Eigen::Map<const Vector>(pre.gain.K_fb.data(),
                                                                pre.gain.K_fb.size()))},
              {"barrier_kind", s.barrier.kind()},
              {"x0", to_json(s.x0)},
              {"xhat0", to_json(s.initial_estimate())},
              {"master_seed", cfg.master_seed},
              {"rng", {{"generator", "splitmix64"}, {"transform", rng::kGaussianTransform}}}};
    if (const auto* f = std::get_if<CjFraction>(&s.params.cj)) j["k_J"] = f->k_J;
    else j["cj_abs"] = std::get<CjAbsolute>(s.params.cj).value;
    if (output) {
        if (!s.gamma_override && s.gamma_mode == GammaMode::MonteCarlo) {
            j["gamma_draws"] = s.gamma_calibration.draws;
            j["gamma_seed"] = s.gamma_calibration.seed;
        }
    }
    if (const auto* q = s.barrier.as<ConcaveQuadratic>()) {
        j["barrier"] = {{"c0", q->c0}, {"center", to_json(q->center)}};
        json W = json::array();
        for (Eigen::Index i = 0; i < q->W.rows(); ++i) W.push_back(to_json(q->W.row(i).transpose()));
        j["barrier"]["W"] = W;
    } else if (const auto* hs = s.barrier.as<HalfSpace>()) {
        j["barrier"] = {{"a", to_json(hs->a)}, {"b", hs->b}};
    }
    return j;
}

inline json summary(const std::string& command, const config::ScenarioConfig& cfg,
                    const Prepared& prep, const BoundResult& theory, const MCSummary* mc,
                    bool timing) {
    json j;
    j["command"] = command;
    j["scenario"] = cfg.scenario.name;
    j["resolved"] = resolved_parameters(cfg, prep);
    j["theory"] = to_json(theory);
    if (mc) j["montecarlo"] = to_json(*mc, timing);
    j["meta"] = cfg.meta;
    j["config"] = config::to_text(cfg);
    return j;
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

inline std::ofstream open(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    return out;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
    auto out = open(p);
    out << j.dump(2) << "\n";
}

inline void write_trials_csv(const std::filesystem::path& p, const std::vector<TrialResult>& trials,
                             bool timing) {
    auto out = open(p);
    out << "trial_id,seed,safe,min_h,exit_step,infeasible_steps,mean_solve_ms\n";
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& t = trials[i];
        out << i << ',' << t.seed << ',' << (t.safe ? 1 : 0) << ',' << num(t.min_h) << ',';
        if (t.exit_step) out << *t.exit_step;
        out << ',' << t.infeasible_steps << ',';
        if (timing) out << num(t.mean_solve_ns * 1e-6);
        out << '\n';
    }
}

inline void write_traj_csv(const std::filesystem::path& p, const std::vector<TrialResult>& trials,
                           Eigen::Index n, Eigen::Index m) {
    auto out = open(p);
    out << "trial,k";
    for (Eigen::Index i = 1; i <= n; ++i) out << ",x" << i;
    for (Eigen::Index i = 1; i <= n; ++i) out << ",xh" << i;
    for (Eigen::Index i = 1; i <= m; ++i) out << ",u" << i;
    out << ",h,h_hat\n";
    for (std::size_t t = 0; t < trials.size(); ++t) {
        for (const auto& r : trials[t].trajectory) {
            out << t << ',' << r.k;
            for (Eigen::Index i = 0; i < n; ++i) out << ',' << num(r.x(i));
            for (Eigen::Index i = 0; i < n; ++i) out << ',' << num(r.xhat(i));
            for (Eigen::Index i = 0; i < m; ++i) {
                out << ',';
                if (r.u.size()) out << num(r.u(i));
            }
            out << ',' << num(r.h) << ',' << num(r.h_hat) << '\n';
        }
    }
}

inline void write_sweep_csv(const std::filesystem::path& p, const std::vector<SweepPoint>& rows) {
    auto out = open(p);
    out << "alpha,k_J,cj_min,cj_max_min,delta_min,p_hat,ci_lo,ci_hi,p_theory,p_exit_raw,vacuous,"
           "infeasible_steps\n";
    for (const auto& r : rows) {
        const auto& c = r.cert;
        out << num(r.alpha) << ',' << num(r.k_J) << ','
            << num(*std::min_element(c.cj.begin(), c.cj.end())) << ','
            << num(*std::min_element(c.cj_max.begin(), c.cj_max.end())) << ','
            << num(c.delta_min) << ',' << num(r.summary.p_safe_hat) << ','
            << num(r.summary.ci95.lo) << ',' << num(r.summary.ci95.hi) << ','
            << num(r.summary.p_safe_theory) << ',' << num(r.summary.theory.p_exit_raw) << ','
            << (r.summary.theory.vacuous ? 1 : 0) << ',' << r.summary.infeasible_steps << '\n';
    }
}

inline void write_grid_csv(const std::filesystem::path& p, const std::vector<GridCell>& cells) {
    auto out = open(p);
    const Eigen::Index n = cells.empty() ? 0 : cells.front().x0.size();
    for (Eigen::Index i = 1; i <= n; ++i) out << "x0_" << i << ',';
    out << "p_hat,p_theory,vacuous\n";
    for (const auto& c : cells) {
        for (Eigen::Index i = 0; i < n; ++i) out << num(c.x0(i)) << ',';
        out << num(c.p_hat) << ',' << num(c.p_theory) << ',' << (c.vacuous ? 1 : 0) << '\n';
    }
}

}  // namespace ofcbf::artifacts
