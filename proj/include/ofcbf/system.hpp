#pragma once

// Discrete-time linear stochastic plant, Kalman one-step predictor and LQR
// synthesis for the nominal controller.
//
//   x_{k+1} = A_k x_k + B_k u_k + w_k,   w_k ~ N(0, Q_k)
//   y_k     = C_k x_k + v_k,             v_k ~ N(0, R_k)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ofcbf/types.hpp"

namespace ofcbf {

// Time-varying matrix schedule. A single entry is broadcast over every step.
class Schedule {
public:
    Schedule() = default;
    Schedule(Matrix constant) : entries_{std::move(constant)} {}  // NOLINT: implicit broadcast
    explicit Schedule(std::vector<Matrix> entries) : entries_(std::move(entries)) {}

    const Matrix& at(std::size_t k) const {
        if (entries_.empty()) throw ConfigError("empty matrix schedule");
        if (entries_.size() == 1) return entries_.front();
        if (k >= entries_.size()) {
            throw ConfigError("step " + std::to_string(k) + " outside schedule of length " +
                              std::to_string(entries_.size()));
        }
        return entries_[k];
    }

    bool is_constant() const { return entries_.size() == 1; }
    std::size_t length() const { return entries_.size(); }
    const std::vector<Matrix>& entries() const { return entries_; }

private:
    std::vector<Matrix> entries_;
};

struct LinearSystem {
    Schedule A;  // n x n
    Schedule B;  // n x m
    Schedule C;  // n_y x n
    Schedule Q;  // n x n, process-noise covariance
    Schedule R;  // n_y x n_y, measurement-noise covariance

    Eigen::Index n() const { return A.at(0).rows(); }
    Eigen::Index m() const { return B.at(0).cols(); }
    Eigen::Index ny() const { return C.at(0).rows(); }

    // Checks shapes of every schedule entry and the covariance conditions.
    void validate() const {
        detail::require(A.length() > 0 && B.length() > 0 && C.length() > 0 &&
                            Q.length() > 0 && R.length() > 0,
                        "system: every matrix schedule needs at least one entry");
        const auto nn = A.at(0).rows();
        const auto mm = B.at(0).cols();
        const auto yy = C.at(0).rows();
        detail::require(nn > 0 && mm > 0 && yy > 0, "system: dimensions must be positive");
        for (const auto& a : A.entries()) detail::require_shape(a, nn, nn, "system.A");
        for (const auto& b : B.entries()) detail::require_shape(b, nn, mm, "system.B");
        for (const auto& c : C.entries()) detail::require_shape(c, yy, nn, "system.C");
        for (const auto& q : Q.entries()) {
            detail::require_shape(q, nn, nn, "system.Q");
            detail::require(detail::is_psd(q), "system.Q must be symmetric positive semidefinite");
        }
        for (const auto& r : R.entries()) {
            detail::require_shape(r, yy, yy, "system.R");
            detail::require(detail::is_psd(r), "system.R must be symmetric positive semidefinite");
        }
    }

    // Largest step index the dense schedules cover; constant systems are unbounded.
    std::size_t schedule_length() const {
        std::size_t len = 0;
        for (const Schedule* s : {&A, &B, &C, &Q, &R}) {
            if (!s->is_constant()) len = len == 0 ? s->length() : std::min(len, s->length());
        }
        return len;  // 0 means "any horizon"
    }

    static LinearSystem constant(Matrix a, Matrix b, Matrix c, Matrix q, Matrix r) {
        LinearSystem sys{std::move(a), std::move(b), std::move(c), std::move(q), std::move(r)};
        sys.validate();
        return sys;
    }
};

inline Vector dynamics_step(const LinearSystem& sys, std::size_t k, const Vector& x,
                            const Vector& u, const Vector& w) {
    const Matrix& A = sys.A.at(k);
    const Matrix& B = sys.B.at(k);
    detail::require_size(x, A.cols(), "x");
    detail::require_size(u, B.cols(), "u");
    detail::require_size(w, A.rows(), "w");
    return A * x + B * u + w;
}

inline Vector measure(const LinearSystem& sys, std::size_t k, const Vector& x, const Vector& v) {
    const Matrix& C = sys.C.at(k);
    detail::require_size(x, C.cols(), "x");
    detail::require_size(v, C.rows(), "v");
    return C * x + v;
}

namespace detail {

// Innovation covariance S = C P C^T + R, rejected when numerically singular.
inline Eigen::LDLT<Matrix> innovation_factor(const Matrix& P, const Matrix& C, const Matrix& R) {
    const Matrix S = symmetrize(C * P * C.transpose() + R);
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * std::max(1.0, hi))) {
        throw NumericError("singular innovation covariance C P C^T + R: eigenvalues in [" +
                           std::to_string(lo) + ", " + std::to_string(hi) +
                           "], condition estimate " +
                           (lo > 0 ? std::to_string(hi / lo) : std::string("inf")));
    }
    return Eigen::LDLT<Matrix>(S);
}

// Symmetrize and clip eigenvalues below -1e-9 to zero.
inline Matrix project_psd(const Matrix& m) {
    Matrix s = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    if (es.eigenvalues().minCoeff() >= -1e-9) return s;
    Vector lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam(i) < -1e-9) lam(i) = 0.0;
    }
    return symmetrize(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace detail

// When C P = 0 the measurement carries no information about the current
// error, the correction term vanishes and a singular R is harmless.
inline Matrix kalman_gain(const Matrix& P, const Matrix& A, const Matrix& C, const Matrix& R) {
    detail::require_shape(P, A.rows(), A.cols(), "P");
    detail::require_shape(C, R.rows(), A.cols(), "C");
    if ((C * P).cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(A.rows(), C.rows());
    auto ldlt = detail::innovation_factor(P, C, R);
    // K = A P C^T S^{-1}  <=>  K^T = S^{-1} C P A^T (S symmetric)
    Matrix Kt = ldlt.solve(C * P * A.transpose());
    return Kt.transpose();
}

inline Matrix riccati_step(const Matrix& P, const Matrix& A, const Matrix& C, const Matrix& Q,
                           const Matrix& R) {
    detail::require_shape(P, A.rows(), A.cols(), "P");
    detail::require_shape(Q, A.rows(), A.cols(), "Q");
    detail::require_shape(C, R.rows(), A.cols(), "C");
    if ((C * P).cwiseAbs().maxCoeff() == 0.0) return detail::project_psd(A * P * A.transpose() + Q);
    auto ldlt = detail::innovation_factor(P, C, R);
    const Matrix CPAt = C * P * A.transpose();
    const Matrix next = A * P * A.transpose() + Q - CPAt.transpose() * ldlt.solve(CPAt);
    return detail::project_psd(next);
}

// Prediction-error covariances P_0..P_T and gains K_0..K_{T-1}.
struct FilterSchedule {
    std::vector<Matrix> P;
    std::vector<Matrix> K;

    std::size_t horizon() const { return K.size(); }
};

inline FilterSchedule build_filter_schedule(const LinearSystem& sys, const Matrix& P0,
                                            std::size_t horizon) {
    detail::require_shape(P0, sys.n(), sys.n(), "P0");
    detail::require(detail::is_psd(P0), "P0 must be symmetric positive semidefinite");
    const std::size_t len = sys.schedule_length();
    detail::require(len == 0 || horizon <= len,
                    "horizon " + std::to_string(horizon) + " exceeds system schedule length " +
                        std::to_string(len));
    FilterSchedule sched;
    sched.P.reserve(horizon + 1);
    sched.K.reserve(horizon);
    sched.P.push_back(detail::symmetrize(P0));
    for (std::size_t k = 0; k < horizon; ++k) {
        const Matrix& P = sched.P.back();
        sched.K.push_back(kalman_gain(P, sys.A.at(k), sys.C.at(k), sys.R.at(k)));
        sched.P.push_back(riccati_step(P, sys.A.at(k), sys.C.at(k), sys.Q.at(k), sys.R.at(k)));
    }
    return sched;
}

// x̂_{k+1} = A_k x̂_k + B_k u_k + K_k (y_k - C_k x̂_k). The input u_k must have been
// computed from x̂_k alone, before y_k is incorporated.
inline Vector predictor_update(const Vector& xhat, const Vector& u, const Vector& y,
                               std::size_t k, const LinearSystem& sys,
                               const FilterSchedule& sched) {
    if (k >= sched.K.size()) {
        throw ConfigError("filter schedule does not cover step " + std::to_string(k));
    }
    const Matrix& A = sys.A.at(k);
    const Matrix& C = sys.C.at(k);
    detail::require_size(xhat, A.cols(), "xhat");
    detail::require_size(y, C.rows(), "y");
    return A * xhat + sys.B.at(k) * u + sched.K[k] * (y - C * xhat);
}

struct DlqrResult {
    Matrix K;  // m x n feedback gain, u = -K x
    Matrix P;  // value matrix
    int iterations = 0;
    double residual = 0.0;
};

namespace detail {

inline Matrix dlqr_map(const Matrix& P, const Matrix& A, const Matrix& B, const Matrix& Q,
                       const Matrix& R) {
    const Matrix BtPA = B.transpose() * P * A;
    const Matrix G = R + B.transpose() * P * B;
    return symmetrize(Q + A.transpose() * P * A - BtPA.transpose() * G.ldlt().solve(BtPA));
}

inline Matrix dlqr_gain(const Matrix& P, const Matrix& A, const Matrix& B, const Matrix& R) {
    const Matrix G = R + B.transpose() * P * B;
    return G.ldlt().solve(B.transpose() * P * A);
}

}  // namespace detail

// Fixed-point iteration of the discrete algebraic Riccati equation.
inline DlqrResult solve_dlqr(const Matrix& A, const Matrix& B, const Matrix& Q_lqr,
                             const Matrix& R_lqr, double tol = 1e-10, int max_iter = 10000) {
    const auto n = A.rows();
    detail::require_shape(A, n, n, "lqr A");
    detail::require(B.rows() == n, "lqr B must have " + std::to_string(n) + " rows");
    const auto m = B.cols();
    detail::require_shape(Q_lqr, n, n, "lqr Q");
    detail::require_shape(R_lqr, m, m, "lqr R");
    detail::require(detail::is_psd(Q_lqr), "lqr Q must be positive semidefinite");
    detail::require(detail::is_psd(R_lqr) && detail::min_eigenvalue(R_lqr) > 0,
                    "lqr R must be positive definite");

    DlqrResult out;
    Matrix P = Q_lqr;
    double diff = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        Matrix next = detail::dlqr_map(P, A, B, Q_lqr, R_lqr);
        diff = (next - P).cwiseAbs().maxCoeff();
        P = std::move(next);
        out.iterations = it;
        if (diff < tol) break;
    }
    out.residual = diff;
    if (!(diff < tol)) {
        throw NumericError("LQR Riccati iteration did not converge: residual " +
                           std::to_string(diff) + " after " + std::to_string(max_iter) +
                           " iterations");
    }
    out.P = P;
    out.K = detail::dlqr_gain(P, A, B, R_lqr);
    const Matrix closed = A - B * out.K;
    const double rho = closed.eigenvalues().cwiseAbs().maxCoeff();
    if (!(rho < 1.0)) {
        throw NumericError("LQR closed loop is not stable: spectral radius " + std::to_string(rho));
    }
    return out;
}

// u = -K_fb (x - target) + offset
struct StaticGain {
    Matrix K_fb;
    Vector target;
    Vector offset;
};

struct LqrWeights {
    Matrix Q_lqr;
    Matrix R_lqr;
    Vector target;
};

class NominalController {
public:
    NominalController() = default;
    NominalController(StaticGain g) : spec_(std::move(g)) {}  // NOLINT
    NominalController(LqrWeights w) : spec_(std::move(w)) {}  // NOLINT

    const std::variant<StaticGain, LqrWeights>& spec() const { return spec_; }
    bool is_lqr() const { return std::holds_alternative<LqrWeights>(spec_); }

    // LQR weights are synthesized against (A_0, B_0).
    StaticGain resolve(const LinearSystem& sys) const {
        const auto n = sys.n();
        const auto m = sys.m();
        if (const auto* g = std::get_if<StaticGain>(&spec_)) {
            StaticGain out = *g;
            detail::require_shape(out.K_fb, m, n, "nominal.gain");
            if (out.target.size() == 0) out.target = Vector::Zero(n);
            if (out.offset.size() == 0) out.offset = Vector::Zero(m);
            detail::require_size(out.target, n, "nominal.target");
            detail::require_size(out.offset, m, "nominal.offset");
            return out;
        }
        const auto& w = std::get<LqrWeights>(spec_);
        auto lqr = solve_dlqr(sys.A.at(0), sys.B.at(0), w.Q_lqr, w.R_lqr);
        StaticGain out{lqr.K, w.target.size() ? w.target : Vector(Vector::Zero(n)),
                       Vector::Zero(m)};
        detail::require_size(out.target, n, "nominal.target");
        return out;
    }

private:
    std::variant<StaticGain, LqrWeights> spec_;
};

inline Vector nominal_input(const StaticGain& g, const Vector& x) {
    return -g.K_fb * (x - g.target) + g.offset;
}

}  // namespace ofcbf
