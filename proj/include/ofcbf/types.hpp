#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ofcbf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised for malformed inputs: bad dimensions, out-of-range parameters,
// missing barrier data. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a computation cannot proceed (singular innovation covariance,
// Riccati non-convergence). The CLI maps it to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string dims(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ConfigError(name + " must be " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", got " + dims(m));
    }
}

inline void require_size(const Vector& v, Eigen::Index n, const std::string& name) {
    if (v.size() != n) {
        throw ConfigError(name + " must have " + std::to_string(n) + " entries, got " +
                          std::to_string(v.size()));
    }
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double max_asymmetry(const Matrix& m) {
    return (m - m.transpose()).cwiseAbs().maxCoeff();
}

inline double min_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

inline bool is_psd(const Matrix& m, double tol = 1e-9) {
    if (m.rows() != m.cols()) return false;
    if (m.size() == 0) return true;
    if (max_asymmetry(m) > 1e-9 * (1.0 + m.cwiseAbs().maxCoeff())) return false;
    return min_eigenvalue(m) >= -tol;
}

// Symmetric square root V*sqrt(max(L,0))*V^T; works for singular PSD inputs.
inline Matrix psd_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail
}  // namespace ofcbf
