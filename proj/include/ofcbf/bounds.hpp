#pragma once

// Finite-horizon exit-probability bounds for a barrier satisfying
//   E[h(x_{k+1}) | x_k] >= alpha h(x_k) + delta,   h <= M_eff.
//
// delta <  0: P_exit <= ((M-h0)/M) alpha^K + ((M(1-alpha) - delta)/M) sum_{i=1..K} alpha^{i-1}
// delta >= 0: P_exit <= 1 - (h0/M) ((M alpha + delta)/M)^K
//
// Output feedback uses M_eff = M - h_gamma, h0 = h_hat(x̂_0), delta = delta'
// and subtracts sigma from the safety lower bound.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "ofcbf/types.hpp"

namespace ofcbf {

struct BoundInput {
    double M_eff = 1.0;
    double h0_eff = 1.0;
    double alpha = 0.5;
    double delta = 0.0;
    std::size_t horizon = 0;
    double sigma = 0.0;
};

enum class BoundBranch { DeltaNegative, DeltaNonnegative };

struct BoundResult {
    double p_exit_raw = 1.0;
    double p_exit = 1.0;
    double p_safe_lower = 0.0;
    BoundBranch branch = BoundBranch::DeltaNonnegative;
    bool vacuous = false;  // h0_eff < 0 or raw bound >= 1
};

inline const char* to_string(BoundBranch b) {
    return b == BoundBranch::DeltaNegative ? "delta_negative" : "delta_nonnegative";
}

inline BoundResult exit_bound(const BoundInput& in) {
    detail::require(in.M_eff > 0.0, "bound: M_eff must be positive");
    detail::require(in.alpha > 0.0 && in.alpha < 1.0, "bound: alpha must lie in (0, 1)");
    const double ceiling = in.M_eff * (1.0 - in.alpha);
    detail::require(in.delta <= ceiling + 1e-12 * std::max(1.0, std::abs(ceiling)),
                    "bound: delta " + std::to_string(in.delta) + " exceeds M_eff(1-alpha) = " +
                        std::to_string(ceiling));
    detail::require(in.h0_eff <= in.M_eff * (1.0 + 1e-12),
                    "bound: initial barrier value exceeds M_eff");
    detail::require(in.sigma >= 0.0 && in.sigma <= 1.0, "bound: sigma must lie in [0, 1]");

    const double M = in.M_eff;
    const double K = static_cast<double>(in.horizon);
    BoundResult out;
    if (in.delta < 0.0) {
        out.branch = BoundBranch::DeltaNegative;
        const double aK = std::pow(in.alpha, K);
        const double geom = (1.0 - aK) / (1.0 - in.alpha);  // sum_{i=1..K} alpha^{i-1}
        out.p_exit_raw = ((M - in.h0_eff) / M) * aK + ((ceiling - in.delta) / M) * geom;
    } else {
        out.branch = BoundBranch::DeltaNonnegative;
        out.p_exit_raw = 1.0 - (in.h0_eff / M) * std::pow((M * in.alpha + in.delta) / M, K);
    }
    out.vacuous = in.h0_eff < 0.0 || out.p_exit_raw >= 1.0;
    out.p_exit = in.h0_eff < 0.0 ? 1.0 : std::clamp(out.p_exit_raw, 0.0, 1.0);
    out.p_safe_lower = std::clamp(1.0 - out.p_exit - in.sigma, 0.0, 1.0);
    return out;
}

inline double safety_lower_bound(const BoundInput& in) { return exit_bound(in).p_safe_lower; }

}  // namespace ofcbf
