#pragma once

#include <cmath>
#include <random>
#include <string>

#include "bnmf/core.hpp"

namespace bnmf {

enum class NoiseKind { Gaussian, Uniform };

/**
 * Synthetic design: true factors with i.i.d. U(0, entry_upper) entries and
 * rank r_true, plus i.i.d. noise of variance sigma2. Uniform noise is drawn
 * on [-w, w] with w = sqrt(2 sigma2), matching sigma2 = w^2 / 2.
 */
struct SyntheticSpec {
    int m1 = 100;
    int m2 = 100;
    int r_true = 2;
    int K = 5;
    double entry_upper = 3.0;
    double sigma2 = 0.01;
    std::uint64_t seed = 1;
    NoiseKind noise = NoiseKind::Gaussian;

    void validate() const {
        if (m1 < 1 || m2 < 1) throw ConfigError("SyntheticSpec: dimensions must be positive");
        if (r_true < 1 || r_true > K || K > std::min(m1, m2)) {
            throw ConfigError("SyntheticSpec: need 1 <= r_true <= K <= min(m1, m2)");
        }
        if (!(entry_upper > 0.0)) throw ConfigError("SyntheticSpec: entry_upper must be > 0");
        if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw ConfigError("SyntheticSpec: sigma2 must be >= 0");
    }
};

struct SyntheticData {
    Matrix Y;
    Matrix M;
    Factorization truth; // padded with zero columns to width K, unit scales
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::uniform_real_distribution<double> entry(0.0, spec.entry_upper);
    Matrix U = Matrix::Zero(spec.m1, spec.K);
    Matrix V = Matrix::Zero(spec.m2, spec.K);
    for (int i = 0; i < spec.m1; ++i)
        for (int l = 0; l < spec.r_true; ++l) U(i, l) = entry(rng);
    for (int j = 0; j < spec.m2; ++j)
        for (int l = 0; l < spec.r_true; ++l) V(j, l) = entry(rng);

    SyntheticData d;
    d.M = U * V.transpose();
    d.Y = d.M;
    if (spec.sigma2 > 0.0) {
        if (spec.noise == NoiseKind::Gaussian) {
            std::normal_distribution<double> noise(0.0, std::sqrt(spec.sigma2));
            for (Eigen::Index k = 0; k < d.Y.size(); ++k) d.Y.data()[k] += noise(rng);
        } else {
            const double w = std::sqrt(2.0 * spec.sigma2);
            std::uniform_real_distribution<double> noise(-w, w);
            for (Eigen::Index k = 0; k < d.Y.size(); ++k) d.Y.data()[k] += noise(rng);
        }
    }
    d.truth = Factorization(std::move(U), std::move(V), Vector::Ones(spec.K));
    return d;
}

inline NoiseKind parse_noise(const std::string& s) {
    if (s == "gaussian") return NoiseKind::Gaussian;
    if (s == "uniform") return NoiseKind::Uniform;
    throw ConfigError("unknown noise model '" + s + "'");
}

inline std::string noise_name(NoiseKind n) { return n == NoiseKind::Gaussian ? "gaussian" : "uniform"; }

} // namespace bnmf
