#pragma once

// Safety functions h (safe iff h(x) >= 0), their curvature and upper bounds,
// the estimation-error radius gamma and the estimate-based barrier
// h_hat(x) = h(x) - h_gamma.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "ofcbf/rng.hpp"
#include "ofcbf/system.hpp"
#include "ofcbf/types.hpp"

namespace ofcbf {

// h(x) = a^T x + b
struct HalfSpace {
    Vector a;
    double b = 0.0;
};

// h(x) = c0 - (x - center)^T W (x - center)
struct ConcaveQuadratic {
    double c0 = 1.0;
    Matrix W;
    Vector center;
};

// User-supplied smooth barrier. The level-set search starts from
// `interior` (h > 0 there) and scans rays of length `probe_radius`; the
// probe box [probe_lo, probe_hi] is used to sanity-check M.
struct GenericHook {
    std::function<double(const Vector&)> h;
    std::function<Vector(const Vector&)> grad;
    std::function<Matrix(const Vector&)> hess;
    std::optional<double> lambda_max;
    std::optional<double> M;
    Vector interior;
    double probe_radius = 1.0;
    Vector probe_lo;
    Vector probe_hi;
};

class Barrier {
public:
    using Variant = std::variant<HalfSpace, ConcaveQuadratic, GenericHook>;

    Barrier() = default;
    Barrier(HalfSpace s) : v_(std::move(s)) { validate(); }          // NOLINT
    Barrier(ConcaveQuadratic s) : v_(std::move(s)) { validate(); }   // NOLINT
    Barrier(GenericHook s) : v_(std::move(s)) { validate(); }        // NOLINT

    const Variant& variant() const { return v_; }
    template <class T>
    const T* as() const { return std::get_if<T>(&v_); }

    Eigen::Index n() const {
        return std::visit(
            [](const auto& s) -> Eigen::Index {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, HalfSpace>) return s.a.size();
                else if constexpr (std::is_same_v<T, ConcaveQuadratic>) return s.W.rows();
                else return s.interior.size();
            },
            v_);
    }

    std::string kind() const {
        if (as<HalfSpace>()) return "halfspace";
        if (as<ConcaveQuadratic>()) return "quadratic";
        return "generic";
    }

private:
    void validate() const;

    Variant v_;
};

inline double eval_h(const Barrier& bar, const Vector& x) {
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, HalfSpace>) {
                return s.a.dot(x) + s.b;
            } else if constexpr (std::is_same_v<T, ConcaveQuadratic>) {
                const Vector d = x - s.center;
                return s.c0 - d.dot(s.W * d);
            } else {
                return s.h(x);
            }
        },
        bar.variant());
}

inline Vector eval_grad(const Barrier& bar, const Vector& x) {
    return std::visit(
        [&](const auto& s) -> Vector {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, HalfSpace>) {
                return s.a;
            } else if constexpr (std::is_same_v<T, ConcaveQuadratic>) {
                return -2.0 * s.W * (x - s.center);
            } else {
                return s.grad(x);
            }
        },
        bar.variant());
}

// Bound on the spectral norm of the Hessian of h.
inline double hessian_bound(const Barrier& bar) {
    if (bar.as<HalfSpace>()) return 0.0;
    if (const auto* q = bar.as<ConcaveQuadratic>()) return 2.0 * detail::max_eigenvalue(q->W);
    const auto& g = *bar.as<GenericHook>();
    if (!g.lambda_max) throw ConfigError("generic barrier requires lambda_max");
    return *g.lambda_max;
}

// E[h(x)] for x ~ N(mu, Sigma). Exact for the affine and quadratic classes;
// generic barriers have no closed form.
inline double expected_h(const Barrier& bar, const Vector& mu, const Matrix& Sigma) {
    detail::require_size(mu, bar.n(), "mean");
    detail::require_shape(Sigma, bar.n(), bar.n(), "covariance");
    if (bar.as<HalfSpace>()) return eval_h(bar, mu);
    if (const auto* q = bar.as<ConcaveQuadratic>()) return eval_h(bar, mu) - (q->W * Sigma).trace();
    throw ConfigError("expected_h has no closed form for generic barriers");
}

// Global upper bound M of h. Linear barriers have none, so the caller's
// fallback is used.
inline double upper_bound_M(const Barrier& bar, std::optional<double> fallback_M = std::nullopt) {
    if (const auto* q = bar.as<ConcaveQuadratic>()) return q->c0;
    if (bar.as<HalfSpace>()) {
        if (!fallback_M) {
            throw ConfigError(
                "half-space barrier is unbounded above: set barrier.fallback_M to the value of M "
                "used in the c_J ceiling");
        }
        return *fallback_M;
    }
    const auto& g = *bar.as<GenericHook>();
    if (!g.M) throw ConfigError("generic barrier requires an upper bound M");
    return *g.M;
}

inline void Barrier::validate() const {
    if (const auto* s = as<HalfSpace>()) {
        detail::require(s->a.size() > 0 && s->a.cwiseAbs().maxCoeff() > 0.0,
                        "half-space barrier: normal vector a must be nonzero");
    } else if (const auto* q = as<ConcaveQuadratic>()) {
        detail::require(q->W.rows() > 0 && q->W.rows() == q->W.cols(),
                        "quadratic barrier: W must be square");
        detail::require(detail::is_psd(q->W), "quadratic barrier: W must be symmetric PSD");
        detail::require(q->c0 > 0.0, "quadratic barrier: c0 must be positive");
        detail::require_size(q->center, q->W.rows(), "quadratic barrier center");
    } else {
        const auto& g = *as<GenericHook>();
        detail::require(static_cast<bool>(g.h) && static_cast<bool>(g.grad),
                        "generic barrier: h and grad callbacks are required");
        detail::require(g.interior.size() > 0, "generic barrier: interior point is required");
        detail::require(g.h(g.interior) > 0.0, "generic barrier: h(interior) must be positive");
        detail::require(!g.lambda_max || *g.lambda_max >= 0.0,
                        "generic barrier: lambda_max must be nonnegative");
        if (g.M && g.probe_lo.size() == g.interior.size() &&
            g.probe_hi.size() == g.interior.size()) {
            const rng::Stream s(0x5eed, 0, rng::Channel::Probe);
            const auto n = g.interior.size();
            for (std::uint64_t i = 0; i < 4096; ++i) {
                Vector x(n);
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double u = s.uniform_at(i * static_cast<std::uint64_t>(n) +
                                                  static_cast<std::uint64_t>(j));
                    x(j) = g.probe_lo(j) + u * (g.probe_hi(j) - g.probe_lo(j));
                }
                if (g.h(x) > *g.M) {
                    throw ConfigError("generic barrier: sampled h exceeds the declared M");
                }
            }
        }
    }
}

// Union-bound radius: the probability that ||e_k|| exceeds gamma at any of
// the steps 0..horizon is at most sigma when e_k ~ N(0, P_k).
inline double compute_gamma(const FilterSchedule& sched, double sigma, std::size_t horizon) {
    detail::require(sigma > 0.0 && sigma < 1.0, "sigma must lie in (0, 1)");
    detail::require(horizon < sched.P.size(), "filter schedule does not cover the horizon");
    const auto n = sched.P.front().rows();
    const boost::math::chi_squared chi2(static_cast<double>(n));
    const double tail = sigma / static_cast<double>(horizon + 1);
    const double q = boost::math::quantile(boost::math::complement(chi2, tail));
    double lam = 0.0;
    for (std::size_t k = 0; k <= horizon; ++k) {
        lam = std::max(lam, detail::max_eigenvalue(sched.P[k]));
    }
    return std::sqrt(q * std::max(lam, 0.0));
}

struct GammaCalibration {
    std::size_t draws = 10000;
    std::uint64_t seed = 0x9a77a;
};

// Empirical (1 - sigma)-quantile of sup_k ||x_k - x̂_k|| over simulated
// estimation-error paths. The error obeys
//   e_{k+1} = (A_k - K_k C_k) e_k + w_k - K_k v_k,   e_0 ~ N(0, P_0),
// independently of the applied inputs.
inline double compute_gamma_montecarlo(const LinearSystem& sys, const FilterSchedule& sched,
                                       double sigma, std::size_t horizon,
                                       const GammaCalibration& cal = {}) {
    detail::require(sigma > 0.0 && sigma < 1.0, "sigma must lie in (0, 1)");
    detail::require(horizon <= sched.horizon(), "filter schedule does not cover the horizon");
    detail::require(cal.draws > 0, "gamma calibration needs at least one draw");
    const rng::GaussianSampler e0(sched.P.front());
    std::vector<rng::GaussianSampler> wq, vr;
    std::vector<Matrix> closed;
    for (std::size_t k = 0; k < horizon; ++k) {
        wq.emplace_back(sys.Q.at(k));
        vr.emplace_back(sys.R.at(k));
        closed.push_back(sys.A.at(k) - sched.K[k] * sys.C.at(k));
    }
    std::vector<double> sup(cal.draws);
    for (std::size_t d = 0; d < cal.draws; ++d) {
        const std::uint64_t seed = rng::combine(cal.seed, d);
        Vector e = e0.draw(rng::Stream(seed, 0, rng::Channel::EstimationError));
        double s = e.norm();
        for (std::size_t k = 0; k < horizon; ++k) {
            const Vector w = wq[k].draw(rng::Stream(seed, k, rng::Channel::Process));
            const Vector v = vr[k].draw(rng::Stream(seed, k, rng::Channel::Measurement));
            e = closed[k] * e + w - sched.K[k] * v;
            s = std::max(s, e.norm());
        }
        sup[d] = s;
    }
    const auto rank = static_cast<std::size_t>(
        std::ceil((1.0 - sigma) * static_cast<double>(cal.draws)));
    const std::size_t idx = std::min(cal.draws - 1, rank == 0 ? std::size_t{0} : rank - 1);
    std::nth_element(sup.begin(), sup.begin() + static_cast<std::ptrdiff_t>(idx), sup.end());
    return sup[idx];
}

struct HGammaOptions {
    std::size_t samples = 4096;
    int iterations = 100;
    double step_fraction = 0.1;  // initial ascent step as a fraction of gamma
    std::uint64_t seed = 0x4ea;
};

namespace detail {

// Maximize h over the closed gamma-ball around `center` by normalized
// gradient ascent with projection and step halving.
inline double ball_ascent(const Barrier& bar, const Vector& center, double gamma,
                          const HGammaOptions& opt) {
    Vector x = center;
    double best = eval_h(bar, x);
    double step = opt.step_fraction * gamma;
    for (int it = 0; it < opt.iterations && step > 1e-14 * (1.0 + gamma); ++it) {
        const Vector g = eval_grad(bar, x);
        const double gn = g.norm();
        if (gn == 0.0) break;
        Vector cand = x + (step / gn) * g;
        const Vector off = cand - center;
        const double r = off.norm();
        if (r > gamma) cand = center + (gamma / r) * off;
        const double val = eval_h(bar, cand);
        if (val > best) {
            best = val;
            x = cand;
        } else {
            step *= 0.5;
        }
    }
    return best;
}

inline std::vector<Vector> unit_directions(Eigen::Index n, std::size_t count,
                                           std::uint64_t seed) {
    std::vector<Vector> dirs;
    dirs.reserve(count);
    if (n == 2) {
        for (std::size_t i = 0; i < count; ++i) {
            const double th = 2.0 * std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(count);
            Vector d(2);
            d << std::cos(th), std::sin(th);
            dirs.push_back(d);
        }
        return dirs;
    }
    for (std::size_t i = 0; i < count; ++i) {
        Vector d = rng::Stream(seed, i, rng::Channel::Probe).normal_vector(n);
        const double nrm = d.norm();
        if (nrm > 0.0) dirs.push_back(d / nrm);
    }
    return dirs;
}

// Points of the zero level set of h.
inline std::vector<Vector> sample_level_set(const Barrier& bar, const HGammaOptions& opt) {
    std::vector<Vector> pts;
    const auto dirs = unit_directions(bar.n(), opt.samples, opt.seed);
    if (const auto* q = bar.as<ConcaveQuadratic>()) {
        for (const auto& d : dirs) {
            const double curv = d.dot(q->W * d);
            if (curv <= 0.0) continue;
            pts.push_back(q->center + std::sqrt(q->c0 / curv) * d);
        }
        return pts;
    }
    const auto& g = *bar.as<GenericHook>();
    for (const auto& d : dirs) {
        const Vector far = g.interior + g.probe_radius * d;
        if (g.h(far) >= 0.0) continue;
        double lo = 0.0, hi = g.probe_radius;
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (g.h(g.interior + mid * d) >= 0.0) lo = mid; else hi = mid;
        }
        pts.push_back(g.interior + 0.5 * (lo + hi) * d);
    }
    return pts;
}

}  // namespace detail

// Exact h_gamma for a concave quadratic: the gamma-neighbourhood of the
// boundary reaches down to the scaled ellipsoid with sqrt-level
// sqrt(c0) - gamma*sqrt(lambda_max(W)).
inline double quadratic_h_gamma_closed_form(const ConcaveQuadratic& q, double gamma) {
    const double lam = detail::max_eigenvalue(q.W);
    const double rem = std::max(0.0, std::sqrt(q.c0) - gamma * std::sqrt(lam));
    return q.c0 - rem * rem;
}

// Level-set sampling plus local ascent; a lower estimate of h_gamma.
inline double sampled_h_gamma(const Barrier& bar, double gamma, const HGammaOptions& opt = {}) {
    detail::require(gamma >= 0.0, "gamma must be nonnegative");
    if (bar.as<HalfSpace>()) {
        throw ConfigError("level-set sampling needs a bounded zero level set");
    }
    const auto pts = detail::sample_level_set(bar, opt);
    if (pts.empty()) throw ConfigError("barrier zero level set is empty or was not found");
    if (gamma == 0.0) return 0.0;
    double best = 0.0;
    for (const auto& p : pts) best = std::max(best, detail::ball_ascent(bar, p, gamma, opt));
    return best;
}

// sup{ h(x) : ||x - x0|| <= gamma, h(x0) = 0 }
inline double compute_h_gamma(const Barrier& bar, double gamma, const HGammaOptions& opt = {}) {
    detail::require(gamma >= 0.0, "gamma must be nonnegative");
    if (gamma == 0.0) return 0.0;
    if (const auto* s = bar.as<HalfSpace>()) return gamma * s->a.norm();
    double best = sampled_h_gamma(bar, gamma, opt);
    if (const auto* q = bar.as<ConcaveQuadratic>()) {
        // Sampling can only under-estimate the supremum; keep the exact value
        // when it is larger.
        best = std::max(best, quadratic_h_gamma_closed_form(*q, gamma));
    }
    return best;
}

struct ShiftedBarrier {
    Barrier base;
    double gamma = 0.0;
    double h_gamma = 0.0;
    double sigma = 0.0;
};

inline double eval_h_hat(const ShiftedBarrier& sb, const Vector& x) {
    return eval_h(sb.base, x) - sb.h_gamma;
}

}  // namespace ofcbf
