#pragma once

// Counter-based random streams. Every draw is a pure function of
// (trial seed, step, channel, index), so trial results do not depend on
// execution order or the number of worker threads.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ofcbf/types.hpp"

namespace ofcbf::rng {

// Name recorded in run metadata; changing the transform changes every draw.
inline constexpr const char* kGaussianTransform = "splitmix64-counter/box-muller-cos";

enum class Channel : std::uint64_t {
    Process = 1,
    Measurement = 2,
    EstimationError = 3,
    Calibration = 4,
    Probe = 5,
};

constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

// Seed of trial `index` under `master`.
constexpr std::uint64_t trial_seed(std::uint64_t master, std::uint64_t index) {
    return combine(master, index);
}

class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t step, Channel channel)
        : key_(combine(combine(seed, step), static_cast<std::uint64_t>(channel))) {}

    // Uniform in (0, 1].
    double uniform_at(std::uint64_t i) const {
        const std::uint64_t bits = splitmix64(key_ + i * 0xd1b54a32d192ed03ULL);
        return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
    }

    // Standard normal draw number i (uses uniforms 2i and 2i+1).
    double normal_at(std::uint64_t i) const {
        const double u1 = uniform_at(2 * i);
        const double u2 = uniform_at(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    Vector normal_vector(Eigen::Index d) const {
        Vector z(d);
        for (Eigen::Index i = 0; i < d; ++i) z(i) = normal_at(static_cast<std::uint64_t>(i));
        return z;
    }

private:
    std::uint64_t key_;
};

// Zero-mean Gaussian sampler with covariance `cov` (PSD, possibly singular).
class GaussianSampler {
public:
    GaussianSampler() = default;
    explicit GaussianSampler(const Matrix& cov)
        : root_(detail::psd_sqrt(cov)), zero_(cov.cwiseAbs().maxCoeff() == 0.0) {}

    Vector draw(const Stream& s) const {
        if (zero_) return Vector::Zero(root_.rows());
        return root_ * s.normal_vector(root_.cols());
    }

    const Matrix& root() const { return root_; }

private:
    Matrix root_;
    bool zero_ = true;
};

}  // namespace ofcbf::rng
