#pragma once

// Per-step minimally invasive safe input:
//
//   u* = argmin ||u - u_nom||^2
//        s.t. h(A s + B u) - shift - c_J >= alpha * (h(s) - shift)
//
// where s is the estimate x̂ and shift = h_gamma in output-feedback mode, and
// s is the true state with shift = 0 in state-feedback mode.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <variant>

#include "ofcbf/barrier.hpp"
#include "ofcbf/types.hpp"

namespace ofcbf {

enum class FeedbackMode { OutputFeedback, StateFeedback };
enum class InfeasiblePolicy { LeastViolation, Nominal, Fail };

struct CjAbsolute {
    double value = 0.0;
};
struct CjFraction {
    double k_J = 0.0;
};
using CjSpec = std::variant<CjAbsolute, CjFraction>;

struct SafetyParams {
    double alpha = 0.5;
    CjSpec cj = CjFraction{0.0};
    double sigma = 0.05;
    FeedbackMode mode = FeedbackMode::OutputFeedback;
    InfeasiblePolicy infeasible_policy = InfeasiblePolicy::LeastViolation;
    double input_box = 1e6;  // ||u||_inf guard for the least-violation fallback

    void validate() const {
        detail::require(alpha > 0.0 && alpha < 1.0, "safety.alpha must lie in (0, 1)");
        if (const auto* f = std::get_if<CjFraction>(&cj)) {
            detail::require(f->k_J >= 0.0 && f->k_J <= 1.0, "safety.k_J must lie in [0, 1]");
        } else {
            detail::require(std::get<CjAbsolute>(cj).value >= 0.0,
                            "safety.cj_abs must be nonnegative");
        }
        detail::require(input_box > 0.0, "safety.input_box must be positive");
        if (mode == FeedbackMode::OutputFeedback) {
            detail::require(sigma > 0.0 && sigma < 1.0, "safety.sigma must lie in (0, 1)");
        }
    }
};

struct FilterStepResult {
    Vector u_star;
    bool feasible = true;
    bool certified = true;  // false for the best-effort generic-barrier solve
    double constraint_slack = 0.0;
    std::chrono::nanoseconds solve_time{0};
};

// Largest admissible c'_J:
//   (M - h_gamma)(1 - alpha) + lambda/2 tr(K R K^T) + lambda/2 tr(K C P C^T K^T)
inline double compute_cj_max(double M, double h_gamma, double alpha, double lambda_max,
                             const Matrix& K, const Matrix& R, const Matrix& C,
                             const Matrix& P) {
    if (!(M > h_gamma)) {
        throw ConfigError("M = " + std::to_string(M) + " does not exceed h_gamma = " +
                          std::to_string(h_gamma) +
                          ": the estimation margin swallows the safe set");
    }
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    const double meas = (K * R * K.transpose()).trace();
    const double err = (K * C * P * C.transpose() * K.transpose()).trace();
    return (M - h_gamma) * (1.0 - alpha) + 0.5 * lambda_max * (meas + err);
}

// delta' at its admissible ceiling; negative when the Jensen terms exceed c'_J.
inline double compute_delta_prime(double cj, double lambda_max, const Matrix& K, const Matrix& R,
                                  const Matrix& C, const Matrix& P) {
    detail::require(cj >= 0.0, "c'_J must be nonnegative");
    const double meas = (K * R * K.transpose()).trace();
    const double err = (K * C * P * C.transpose() * K.transpose()).trace();
    return cj - 0.5 * lambda_max * meas - 0.5 * lambda_max * err;
}

// State-feedback counterparts: ceiling M(1 - alpha) + lambda/2 tr(Q) and
// delta = c_J - lambda/2 tr(Q).
inline double compute_cj_max_state(double M, double alpha, double lambda_max, const Matrix& Q) {
    detail::require(M > 0.0, "M must be positive");
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    return M * (1.0 - alpha) + 0.5 * lambda_max * Q.trace();
}

inline double compute_delta_state(double cj, double lambda_max, const Matrix& Q) {
    detail::require(cj >= 0.0, "c_J must be nonnegative");
    return cj - 0.5 * lambda_max * Q.trace();
}

struct CjResolution {
    double value = 0.0;
    bool clamped = false;  // an absolute c_J outside [0, cj_max] was clipped
};

inline CjResolution resolve_cj(const SafetyParams& params, double cj_max) {
    detail::require(cj_max >= 0.0, "c_J ceiling must be nonnegative");
    if (const auto* f = std::get_if<CjFraction>(&params.cj)) return {f->k_J * cj_max, false};
    const double v = std::get<CjAbsolute>(params.cj).value;
    const double c = std::clamp(v, 0.0, cj_max);
    return {c, c != v};
}

namespace detail {

// Required barrier value at the successor state.
inline double required_level(double h_now, double shift, double cj, double alpha) {
    return cj + shift + alpha * (h_now - shift);
}

inline void clamp_box(Vector& u, double box) {
    u = u.cwiseMax(-box).cwiseMin(box);
}

inline FilterStepResult infeasible_result(InfeasiblePolicy policy, const Vector& u_nom,
                                          const Vector& least_violation, double box) {
    if (policy == InfeasiblePolicy::Fail) {
        throw NumericError("safety filter constraint is infeasible at this step");
    }
    FilterStepResult r;
    r.feasible = false;
    r.u_star = policy == InfeasiblePolicy::Nominal ? u_nom : least_violation;
    clamp_box(r.u_star, box);
    return r;
}

// Projection of u_nom onto {u : g^T u >= rhs}.
inline FilterStepResult solve_halfspace(const Vector& g, double rhs, const Vector& u_nom,
                                        const SafetyParams& params) {
    FilterStepResult r;
    const double have = g.dot(u_nom);
    if (have >= rhs) {
        r.u_star = u_nom;
        return r;
    }
    const double gg = g.squaredNorm();
    if (gg == 0.0) return infeasible_result(params.infeasible_policy, u_nom, u_nom, params.input_box);
    r.u_star = u_nom + ((rhs - have) / gg) * g;
    if (r.u_star.cwiseAbs().maxCoeff() > params.input_box) {
        // Only reachable with an absurd required correction.
        Vector capped = r.u_star;
        clamp_box(capped, params.input_box);
        if (g.dot(capped) < rhs - 1e-8) {
            return infeasible_result(params.infeasible_policy, u_nom, capped, params.input_box);
        }
        r.u_star = capped;
    }
    return r;
}

// min ||u - u_nom||^2  s.t.  (c + B u)^T W (c + B u) <= r
//
// Stationarity gives u(mu) = (I + mu H)^{-1} (u_nom - mu b) with
// H = B^T W B and b = B^T W c; the constraint residual is nonincreasing in
// mu, so the active multiplier is found by bisection.
class QuadraticProjection {
public:
    QuadraticProjection(const Matrix& W, const Matrix& B, const Vector& c, double r)
        : W_(W), B_(B), c_(c), r_(r) {
        const Matrix H = detail::symmetrize(B.transpose() * W * B);
        Eigen::SelfAdjointEigenSolver<Matrix> es(H);
        V_ = es.eigenvectors();
        lam_ = es.eigenvalues().cwiseMax(0.0);
        bt_ = V_.transpose() * (B.transpose() * (W * c));
    }

    double residual(const Vector& u) const {
        const Vector z = c_ + B_ * u;
        return z.dot(W_ * z);
    }

    Vector at(double mu, const Vector& u_nom) const {
        const Vector ut = V_.transpose() * u_nom;
        Vector s(ut.size());
        for (Eigen::Index i = 0; i < ut.size(); ++i) {
            s(i) = (ut(i) - mu * bt_(i)) / (1.0 + mu * lam_(i));
        }
        return V_ * s;
    }

    // Limit of u(mu) as mu -> inf: the minimizer of the residual closest to u_nom.
    Vector least_violation(const Vector& u_nom) const {
        const Vector ut = V_.transpose() * u_nom;
        const double cut = 1e-12 * std::max(1.0, lam_.maxCoeff());
        Vector s = ut;
        for (Eigen::Index i = 0; i < ut.size(); ++i) {
            if (lam_(i) > cut) s(i) = -bt_(i) / lam_(i);
        }
        return V_ * s;
    }

    double r() const { return r_; }

private:
    Matrix W_, B_;
    Vector c_;
    double r_;
    Matrix V_;
    Vector lam_, bt_;
};

inline FilterStepResult solve_quadratic(const QuadraticProjection& qp, const Vector& u_nom,
                                        const SafetyParams& params) {
    constexpr double kTol = 1e-10;
    constexpr int kMaxIter = 200;
    FilterStepResult res;
    if (qp.residual(u_nom) <= qp.r()) {
        res.u_star = u_nom;
        return res;
    }
    const Vector u_lv = qp.least_violation(u_nom);
    if (qp.r() < 0.0 || qp.residual(u_lv) > qp.r() + kTol) {
        return infeasible_result(params.infeasible_policy, u_nom, u_lv, params.input_box);
    }
    double lo = 0.0, hi = 1.0;
    int doublings = 0;
    while (qp.residual(qp.at(hi, u_nom)) > qp.r()) {
        hi *= 2.0;
        if (++doublings > kMaxIter) {
            // The feasible set touches only the least-violation point.
            res.u_star = u_lv;
            return res;
        }
    }
    for (int it = 0; it < kMaxIter; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double g = qp.residual(qp.at(mid, u_nom));
        if (g > qp.r()) lo = mid; else hi = mid;
        if (qp.r() - g <= kTol && g <= qp.r()) {
            hi = mid;
            break;
        }
    }
    res.u_star = qp.at(hi, u_nom);
    return res;
}

// Generic barrier: damped Newton steps on the scalar constraint restore
// feasibility; linearized projections of u_nom, each followed by a
// restoration, are accepted while they move closer. Feasibility is checked on
// the true constraint; optimality is not certified.
inline FilterStepResult solve_generic(const Barrier& bar, const Matrix& A, const Matrix& B,
                                      const Vector& s, double level, const Vector& u_nom,
                                      const SafetyParams& params) {
    const Vector drift = A * s;
    auto slack = [&](const Vector& u) { return eval_h(bar, drift + B * u) - level; };
    auto input_grad = [&](const Vector& u) -> Vector {
        return B.transpose() * eval_grad(bar, drift + B * u);
    };
    auto restore = [&](Vector u) {
        for (int it = 0; it < 200 && slack(u) < 0.0; ++it) {
            const Vector g = input_grad(u);
            const double gg = g.squaredNorm();
            if (gg == 0.0) break;
            const double now = slack(u);
            // Aim slightly past the boundary so the iterate lands inside.
            const Vector step = ((-now + 1e-12 * (1.0 + std::abs(level))) / gg) * g;
            double t = 1.0;
            while (t > 1e-10 && slack(u + t * step) <= now) t *= 0.5;
            if (t <= 1e-10) break;
            u += t * step;
        }
        return u;
    };
    FilterStepResult res;
    res.certified = false;
    if (slack(u_nom) >= 0.0) {
        res.u_star = u_nom;
        return res;
    }
    Vector u = restore(u_nom);
    if (slack(u) < -1e-8) {
        return infeasible_result(params.infeasible_policy, u_nom, u, params.input_box);
    }
    for (int it = 0; it < 200; ++it) {
        const Vector g = input_grad(u);
        const double gg = g.squaredNorm();
        if (gg == 0.0) break;
        // Projection of u_nom onto the constraint linearized at u.
        const double rhs = -slack(u) + g.dot(u);
        const double have = g.dot(u_nom);
        const Vector target = have >= rhs ? u_nom : Vector(u_nom + ((rhs - have) / gg) * g);
        const double cur = (u - u_nom).squaredNorm();
        Vector next = u;
        for (double t = 1.0; t > 1e-8; t *= 0.5) {
            const Vector trial = restore(u + t * (target - u));
            if (slack(trial) >= 0.0 && (trial - u_nom).squaredNorm() < cur) {
                next = trial;
                break;
            }
        }
        const double moved = (next - u).norm();
        u = next;
        if (moved <= 1e-12 * (1.0 + u.norm())) break;
    }
    res.u_star = u;
    return res;
}

}  // namespace detail

// `state` is x̂_k in output-feedback mode and x_k in state-feedback mode.
inline FilterStepResult solve_safe_input(const ShiftedBarrier& sb, const SafetyParams& params,
                                         double cj, const Matrix& A, const Matrix& B,
                                         const Vector& state, const Vector& u_nom) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::require_size(state, A.cols(), "filter state");
    detail::require_size(u_nom, B.cols(), "nominal input");
    const double shift = params.mode == FeedbackMode::OutputFeedback ? sb.h_gamma : 0.0;
    const Barrier& bar = sb.base;
    const double level = detail::required_level(eval_h(bar, state), shift, cj, params.alpha);

    FilterStepResult res;
    if (const auto* hs = bar.as<HalfSpace>()) {
        const Vector g = B.transpose() * hs->a;
        const double rhs = level - hs->b - hs->a.dot(A * state);
        res = detail::solve_halfspace(g, rhs, u_nom, params);
    } else if (const auto* q = bar.as<ConcaveQuadratic>()) {
        const detail::QuadraticProjection qp(q->W, B, A * state - q->center, q->c0 - level);
        res = detail::solve_quadratic(qp, u_nom, params);
    } else {
        res = detail::solve_generic(bar, A, B, state, level, u_nom, params);
    }
    res.constraint_slack = eval_h(bar, A * state + B * res.u_star) - level;
    if (res.feasible && res.constraint_slack < -1e-8) res.feasible = false;
    res.solve_time = std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::steady_clock::now() - t0);
    return res;
}

}  // namespace ofcbf
