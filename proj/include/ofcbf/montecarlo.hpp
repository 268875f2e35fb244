#pragma once

// Seeded closed-loop simulation: plant + Kalman predictor + safety filter.
//
// Every random draw of a trial comes from a counter-based stream keyed by
// (trial seed, step, channel); trial seeds are derived from the master seed
// and the trial index. Results are therefore identical for any worker
// count, and aggregation runs in trial-index order.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ofcbf/barrier.hpp"
#include "ofcbf/bounds.hpp"
#include "ofcbf/rng.hpp"
#include "ofcbf/safety_filter.hpp"
#include "ofcbf/system.hpp"

namespace ofcbf {

enum class GammaMode { Analytic, MonteCarlo };

struct Scenario {
    std::string name = "custom";
    LinearSystem sys;
    Barrier barrier;
    NominalController nominal;
    SafetyParams params;
    Vector x0;
    std::optional<Vector> xhat0;  // defaults to x0
    Matrix P0;
    std::size_t horizon = 100;
    std::optional<double> fallback_M;
    GammaMode gamma_mode = GammaMode::MonteCarlo;
    GammaCalibration gamma_calibration;
    HGammaOptions h_gamma_options;
    std::optional<double> gamma_override;  // bypasses calibration when set

    Vector initial_estimate() const { return xhat0 ? *xhat0 : x0; }

    void validate() const {
        sys.validate();
        params.validate();
        const auto n = sys.n();
        detail::require(barrier.n() == n, "barrier dimension " + std::to_string(barrier.n()) +
                                              " does not match state dimension " +
                                              std::to_string(n));
        detail::require_size(x0, n, "run.x0");
        if (xhat0) detail::require_size(*xhat0, n, "run.xhat0");
        detail::require_shape(P0, n, n, "system.P0");
        detail::require(detail::is_psd(P0), "system.P0 must be symmetric PSD");
        detail::require(horizon >= 1, "run.T must be at least 1");
        if (gamma_override) detail::require(*gamma_override >= 0.0, "safety.gamma must be >= 0");
    }
};

// Everything that depends on the plant, barrier and estimator but not on
// (alpha, c'_J) or the initial state.
struct Precomputed {
    FilterSchedule sched;
    StaticGain gain;
    ShiftedBarrier shifted;
    double M = 0.0;
    double lambda_max = 0.0;
    std::vector<rng::GaussianSampler> process;
    std::vector<rng::GaussianSampler> measurement;
};

// Per-step tightening constants and the resulting expectation margins.
struct Certificate {
    std::vector<double> cj_max;
    std::vector<double> cj;
    std::vector<double> delta;
    double delta_min = 0.0;  // margin valid uniformly over the horizon
    bool cj_clamped = false;
};

struct Prepared {
    Precomputed pre;
    Certificate cert;
};

inline Precomputed precompute(const Scenario& scn) {
    scn.validate();
    Precomputed pre;
    pre.sched = build_filter_schedule(scn.sys, scn.P0, scn.horizon);
    pre.gain = scn.nominal.resolve(scn.sys);
    pre.lambda_max = hessian_bound(scn.barrier);
    pre.M = upper_bound_M(scn.barrier, scn.fallback_M);
    pre.shifted.base = scn.barrier;
    if (scn.params.mode == FeedbackMode::OutputFeedback) {
        pre.shifted.sigma = scn.params.sigma;
        if (scn.gamma_override) {
            pre.shifted.gamma = *scn.gamma_override;
        } else if (scn.gamma_mode == GammaMode::Analytic) {
            pre.shifted.gamma = compute_gamma(pre.sched, scn.params.sigma, scn.horizon);
        } else {
            pre.shifted.gamma = compute_gamma_montecarlo(scn.sys, pre.sched, scn.params.sigma,
                                                         scn.horizon, scn.gamma_calibration);
        }
        pre.shifted.h_gamma = compute_h_gamma(scn.barrier, pre.shifted.gamma, scn.h_gamma_options);
    }
    const std::size_t steps = std::max(scn.sys.Q.length(), scn.sys.R.length()) == 1
                                  ? 1
                                  : scn.horizon;
    for (std::size_t k = 0; k < steps; ++k) {
        pre.process.emplace_back(scn.sys.Q.at(k));
        pre.measurement.emplace_back(scn.sys.R.at(k));
    }
    return pre;
}

inline Certificate certify(const Scenario& scn, const Precomputed& pre) {
    scn.params.validate();
    Certificate cert;
    const auto& p = scn.params;
    for (std::size_t k = 0; k < scn.horizon; ++k) {
        double ceiling = 0.0;
        if (p.mode == FeedbackMode::OutputFeedback) {
            ceiling = compute_cj_max(pre.M, pre.shifted.h_gamma, p.alpha, pre.lambda_max,
                                     pre.sched.K[k], scn.sys.R.at(k), scn.sys.C.at(k),
                                     pre.sched.P[k]);
        } else {
            ceiling = compute_cj_max_state(pre.M, p.alpha, pre.lambda_max, scn.sys.Q.at(k));
        }
        const auto cj = resolve_cj(p, ceiling);
        cert.cj_clamped = cert.cj_clamped || cj.clamped;
        const double delta =
            p.mode == FeedbackMode::OutputFeedback
                ? compute_delta_prime(cj.value, pre.lambda_max, pre.sched.K[k], scn.sys.R.at(k),
                                      scn.sys.C.at(k), pre.sched.P[k])
                : compute_delta_state(cj.value, pre.lambda_max, scn.sys.Q.at(k));
        cert.cj_max.push_back(ceiling);
        cert.cj.push_back(cj.value);
        cert.delta.push_back(delta);
    }
    cert.delta_min = *std::min_element(cert.delta.begin(), cert.delta.end());
    return cert;
}

inline Prepared prepare(const Scenario& scn) {
    Prepared prep;
    prep.pre = precompute(scn);
    prep.cert = certify(scn, prep.pre);
    return prep;
}

// Theoretical bound for a start at (x0, x̂0).
inline BoundInput bound_input(const Scenario& scn, const Prepared& prep, const Vector& x0,
                              const Vector& xhat0) {
    BoundInput in;
    in.alpha = scn.params.alpha;
    in.horizon = scn.horizon;
    if (scn.params.mode == FeedbackMode::OutputFeedback) {
        in.M_eff = prep.pre.M - prep.pre.shifted.h_gamma;
        in.h0_eff = eval_h_hat(prep.pre.shifted, xhat0);
        in.sigma = scn.params.sigma;
    } else {
        in.M_eff = prep.pre.M;
        in.h0_eff = eval_h(scn.barrier, x0);
        in.sigma = 0.0;
    }
    // delta_min can only sit above the ceiling through rounding.
    in.delta = std::min(prep.cert.delta_min, in.M_eff * (1.0 - in.alpha));
    return in;
}

// A start above the barrier's upper bound violates the bound's hypotheses;
// the result is reported as vacuous rather than rejected.
inline BoundResult theory_bound(const Scenario& scn, const Prepared& prep, const Vector& x0,
                                const Vector& xhat0) {
    const BoundInput in = bound_input(scn, prep, x0, xhat0);
    if (in.M_eff <= 0.0 || in.h0_eff > in.M_eff * (1.0 + 1e-12)) {
        BoundResult r;
        r.branch = in.delta < 0.0 ? BoundBranch::DeltaNegative : BoundBranch::DeltaNonnegative;
        r.vacuous = true;
        return r;
    }
    return exit_bound(in);
}

struct TrajectoryRow {
    std::size_t k = 0;
    Vector x, xhat, u, y;  // u and y are empty on the final row
    double h = 0.0;
    double h_hat = 0.0;
};

using Trajectory = std::vector<TrajectoryRow>;

struct TrialResult {
    std::uint64_t seed = 0;
    bool safe = true;
    double min_h = 0.0;
    std::optional<std::size_t> exit_step;
    std::size_t infeasible_steps = 0;
    double mean_solve_ns = 0.0;
    Trajectory trajectory;  // filled only when requested
};

inline TrialResult run_trial(const Scenario& scn, const Prepared& prep, std::uint64_t seed,
                             bool log_trajectory = false) {
    const auto& pre = prep.pre;
    const auto& sys = scn.sys;
    const bool output = scn.params.mode == FeedbackMode::OutputFeedback;
    TrialResult tr;
    tr.seed = seed;

    Vector x = scn.x0;
    Vector xhat = scn.initial_estimate();
    double h = eval_h(scn.barrier, x);
    tr.min_h = h;
    if (h < 0.0) tr.exit_step = 0;

    double total_ns = 0.0;
    for (std::size_t k = 0; k < scn.horizon; ++k) {
        const Matrix& A = sys.A.at(k);
        const Matrix& B = sys.B.at(k);
        const Vector& s = output ? xhat : x;
        const Vector u_nom = nominal_input(pre.gain, s);
        const FilterStepResult step =
            solve_safe_input(pre.shifted, scn.params, prep.cert.cj[k], A, B, s, u_nom);
        if (!step.feasible) ++tr.infeasible_steps;
        total_ns += static_cast<double>(step.solve_time.count());

        const std::size_t ni = pre.process.size() == 1 ? 0 : k;
        const Vector w = pre.process[ni].draw(rng::Stream(seed, k, rng::Channel::Process));
        const Vector v = pre.measurement[ni].draw(rng::Stream(seed, k, rng::Channel::Measurement));
        const Vector y = sys.C.at(k) * x + v;

        if (log_trajectory) {
            tr.trajectory.push_back(
                {k, x, xhat, step.u_star, y, h, eval_h_hat(pre.shifted, xhat)});
        }
        xhat = predictor_update(xhat, step.u_star, y, k, sys, pre.sched);
        x = A * x + B * step.u_star + w;
        h = eval_h(scn.barrier, x);
        if (h < tr.min_h) tr.min_h = h;
        if (h < 0.0 && !tr.exit_step) tr.exit_step = k + 1;
    }
    if (log_trajectory) {
        tr.trajectory.push_back(
            {scn.horizon, x, xhat, Vector(), Vector(), h, eval_h_hat(pre.shifted, xhat)});
    }
    tr.safe = !tr.exit_step.has_value();
    tr.mean_solve_ns = total_ns / static_cast<double>(scn.horizon);
    return tr;
}

struct WilsonInterval {
    double lo = 0.0;
    double hi = 1.0;
};

inline WilsonInterval wilson_ci95(std::size_t successes, std::size_t n) {
    if (n == 0) return {};
    constexpr double z = 1.959963984540054;
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double denom = 1.0 + z * z / nn;
    const double centre = (p + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct MCSummary {
    std::size_t trials = 0;
    std::size_t safe = 0;
    double p_safe_hat = 0.0;
    WilsonInterval ci95;
    std::vector<std::size_t> exit_step_histogram;  // index = exit step, 0..T
    std::size_t infeasible_steps = 0;
    std::size_t trials_with_infeasible = 0;
    double mean_solve_ms = 0.0;  // per filter call
    double p50_solve_ms = 0.0;   // percentiles over per-trial means
    double p95_solve_ms = 0.0;
    double max_solve_ms = 0.0;
    BoundResult theory;
    double p_safe_theory = 0.0;
};

struct BatchOptions {
    unsigned workers = 0;  // 0: hardware concurrency
    bool log_trajectories = false;
};

struct BatchResult {
    MCSummary summary;
    std::vector<TrialResult> trials;
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

// Order-fixed aggregation; the summary does not depend on how trials were scheduled.
inline MCSummary summarize(const std::vector<TrialResult>& trials, std::size_t horizon) {
    MCSummary s;
    s.trials = trials.size();
    s.exit_step_histogram.assign(horizon + 1, 0);
    double sum = 0.0, comp = 0.0;  // Kahan
    std::vector<double> means;
    means.reserve(trials.size());
    for (const auto& t : trials) {
        if (t.safe) ++s.safe;
        if (t.exit_step) ++s.exit_step_histogram.at(*t.exit_step);
        s.infeasible_steps += t.infeasible_steps;
        if (t.infeasible_steps > 0) ++s.trials_with_infeasible;
        const double ms = t.mean_solve_ns * 1e-6;
        const double yv = ms - comp;
        const double next = sum + yv;
        comp = (next - sum) - yv;
        sum = next;
        means.push_back(ms);
    }
    if (s.trials > 0) {
        s.p_safe_hat = static_cast<double>(s.safe) / static_cast<double>(s.trials);
        s.mean_solve_ms = sum / static_cast<double>(s.trials);
    }
    s.ci95 = wilson_ci95(s.safe, s.trials);
    s.p50_solve_ms = detail::percentile(means, 0.5);
    s.p95_solve_ms = detail::percentile(means, 0.95);
    s.max_solve_ms = means.empty() ? 0.0 : *std::max_element(means.begin(), means.end());
    return s;
}

inline BatchResult run_batch(const Scenario& scn, const Prepared& prep, std::size_t trials,
                             std::uint64_t master_seed, const BatchOptions& opt = {}) {
    detail::require(trials >= 1, "run.trials must be at least 1");
    BatchResult out;
    out.trials.resize(trials);
    detail::parallel_for(trials, opt.workers, [&](std::size_t i) {
        out.trials[i] =
            run_trial(scn, prep, rng::trial_seed(master_seed, i), opt.log_trajectories);
    });
    out.summary = summarize(out.trials, scn.horizon);
    out.summary.theory = theory_bound(scn, prep, scn.x0, scn.initial_estimate());
    out.summary.p_safe_theory = out.summary.theory.p_safe_lower;
    return out;
}

inline BatchResult run_batch(const Scenario& scn, std::size_t trials, std::uint64_t master_seed,
                             const BatchOptions& opt = {}) {
    return run_batch(scn, prepare(scn), trials, master_seed, opt);
}

struct SweepPoint {
    double alpha = 0.0;
    double k_J = 0.0;
    Certificate cert;
    MCSummary summary;
};

// One batch per (alpha, k_J); the filter schedule, gamma and h_gamma are shared.
inline std::vector<SweepPoint> sweep_params(const Scenario& scn, const std::vector<double>& alphas,
                                            const std::vector<double>& k_Js, std::size_t trials,
                                            std::uint64_t master_seed,
                                            const BatchOptions& opt = {}) {
    detail::require(!alphas.empty() && !k_Js.empty(), "sweep grid must be nonempty");
    Prepared prep;
    prep.pre = precompute(scn);
    std::vector<SweepPoint> rows;
    for (double a : alphas) {
        for (double kj : k_Js) {
            Scenario point = scn;
            point.params.alpha = a;
            point.params.cj = CjFraction{kj};
            prep.cert = certify(point, prep.pre);
            BatchOptions quiet = opt;
            quiet.log_trajectories = false;
            auto batch = run_batch(point, prep, trials, master_seed, quiet);
            rows.push_back({a, kj, prep.cert, batch.summary});
        }
    }
    return rows;
}

struct GridCell {
    Vector x0;
    double p_hat = 0.0;
    double p_theory = 0.0;
    bool vacuous = false;  // start outside the shifted safe set (or above M)
    MCSummary summary;
};

inline std::vector<GridCell> grid_initial_states(const Scenario& scn,
                                                 const std::vector<Vector>& x0_grid,
                                                 std::size_t trials, std::uint64_t master_seed,
                                                 const BatchOptions& opt = {}) {
    detail::require(!x0_grid.empty(), "initial-state grid must be nonempty");
    const Prepared prep = prepare(scn);
    std::vector<GridCell> cells;
    cells.reserve(x0_grid.size());
    BatchOptions quiet = opt;
    quiet.log_trajectories = false;
    for (const auto& x0 : x0_grid) {
        Scenario cell = scn;
        cell.x0 = x0;
        cell.xhat0.reset();
        detail::require_size(x0, scn.sys.n(), "grid x0");
        auto batch = run_batch(cell, prep, trials, master_seed, quiet);
        GridCell g;
        g.x0 = x0;
        g.summary = batch.summary;
        g.p_hat = batch.summary.p_safe_hat;
        g.p_theory = batch.summary.p_safe_theory;
        const BoundInput in = bound_input(cell, prep, x0, x0);
        g.vacuous = in.h0_eff < 0.0 || in.h0_eff > in.M_eff;
        cells.push_back(std::move(g));
    }
    return cells;
}

}  // namespace ofcbf
