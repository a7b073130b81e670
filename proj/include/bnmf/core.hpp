#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>

#include "bnmf/errors.hpp"

namespace bnmf {

/// Dense row-major matrix; carries Y, M, U, V and reconstructions.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

inline void require_finite(const Matrix& A, const char* what) {
    if (!A.allFinite()) {
        throw DomainError(std::string(what) + ": non-finite entry");
    }
}

inline void require_same_shape(const Matrix& A, const Matrix& B, const char* what) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw StructuralError(std::string(what) + ": shape mismatch (" +
                              std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                              " vs " + std::to_string(B.rows()) + "x" +
                              std::to_string(B.cols()) + ")");
    }
}

/**
 * Factor matrices U (m1 x K), V (m2 x K) and the per-column scale vector
 * gamma (length K). Entries of U and V are non-negative, scales strictly
 * positive. The constructor enforces all three.
 */
class Factorization {
  public:
    Factorization() = default;

    Factorization(Matrix U, Matrix V, Vector gamma)
        : U_(std::move(U)), V_(std::move(V)), gamma_(std::move(gamma)) {
        if (U_.cols() != V_.cols() || U_.cols() != gamma_.size()) {
            throw StructuralError("Factorization: U, V and gamma disagree on K");
        }
        if (U_.cols() < 1) {
            throw StructuralError("Factorization: K must be positive");
        }
        require_finite(U_, "Factorization U");
        require_finite(V_, "Factorization V");
        if ((U_.array() < 0.0).any() || (V_.array() < 0.0).any()) {
            throw DomainError("Factorization: negative factor entry");
        }
        if (!gamma_.allFinite() || (gamma_.array() <= 0.0).any()) {
            throw DomainError("Factorization: scales must be finite and > 0");
        }
    }

    const Matrix& U() const noexcept { return U_; }
    const Matrix& V() const noexcept { return V_; }
    const Vector& gamma() const noexcept { return gamma_; }

    Eigen::Index rank_bound() const noexcept { return U_.cols(); }
    Eigen::Index rows() const noexcept { return U_.rows(); }
    Eigen::Index cols() const noexcept { return V_.rows(); }

  private:
    Matrix U_;
    Matrix V_;
    Vector gamma_;
};

/**
 * Noise level, inverse temperature and factorization width.
 *
 * `theorem` builds the configuration with lambda = 1 / (4 sigma2), the value
 * under which the oracle bound holds.
 */
struct ModelConfig {
    double sigma2 = 1.0;
    double lambda = 0.25;
    int K = 2;

    static ModelConfig theorem(double sigma2, int K) {
        ModelConfig c{sigma2, 1.0 / (4.0 * sigma2), K};
        c.validate();
        return c;
    }

    bool theorem_mode() const noexcept { return lambda <= 1.0 / (4.0 * sigma2) * (1.0 + 1e-12); }

    void validate() const {
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
            throw ConfigError("ModelConfig: sigma2 must be positive");
        }
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
            throw ConfigError("ModelConfig: lambda must be positive");
        }
        if (K < 2) {
            throw ConfigError("ModelConfig: K must be >= 2");
        }
    }

    void validate(Eigen::Index m1, Eigen::Index m2) const {
        validate();
        if (K > std::min(m1, m2)) {
            throw ConfigError("ModelConfig: K must not exceed min(m1, m2)");
        }
    }
};

/// U V^T.
inline Matrix reconstruct(const Factorization& fac) {
    return fac.U() * fac.V().transpose();
}

inline Matrix reconstruct(const Matrix& U, const Matrix& V) {
    if (U.cols() != V.cols()) {
        throw StructuralError("reconstruct: U and V have different widths");
    }
    return U * V.transpose();
}

/// Squared Frobenius distance ||A - B||_F^2.
inline double frobenius_sq(const Matrix& A, const Matrix& B) {
    require_same_shape(A, B, "frobenius_sq");
    return (A - B).squaredNorm();
}

inline double mse(const Matrix& M, const Matrix& Mhat) {
    require_same_shape(M, Mhat, "mse");
    return frobenius_sq(M, Mhat) / static_cast<double>(M.rows() * M.cols());
}

/// Number of scales strictly above tau.
inline int effective_rank(const Vector& gamma, double tau) {
    return static_cast<int>((gamma.array() > tau).count());
}

inline int effective_rank(const Factorization& fac, double tau) {
    return effective_rank(fac.gamma(), tau);
}

/// Relative threshold used by reports: 1e-3 of the largest scale.
inline double relative_threshold(const Vector& gamma, double rel = 1e-3) {
    return rel * gamma.maxCoeff();
}

/**
 * Starting point shared by both estimators: factor entries uniform on
 * (0, sqrt(mean(max(Y, 0)) / K)), unit scales.
 */
inline Factorization default_init(const Matrix& Y, int K, Rng& rng) {
    const double mean_pos = Y.cwiseMax(0.0).mean();
    double upper = std::sqrt(mean_pos / K);
    if (!(upper > 0.0)) {
        upper = 1.0;
    }
    std::uniform_real_distribution<double> unif(0.0, upper);
    Matrix U(Y.rows(), K);
    Matrix V(Y.cols(), K);
    for (Eigen::Index i = 0; i < U.size(); ++i) {
        U.data()[i] = unif(rng);
    }
    for (Eigen::Index i = 0; i < V.size(); ++i) {
        V.data()[i] = unif(rng);
    }
    return Factorization(std::move(U), std::move(V), Vector::Ones(K));
}

/// Independent stream for task `index` under a master seed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

} // namespace bnmf
