#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "bnmf/core.hpp"
#include "bnmf/priors.hpp"

namespace bnmf {

/**
 * Comparison factorization (U0, V0) in M_r: only the first r columns may be
 * non-zero. U0 and V0 may be stored with r columns or already padded to K.
 * L, when present, bounds every entry.
 */
struct BoundQuery {
    Matrix U0;
    Matrix V0;
    int r = 1;
    std::optional<double> L;

    void validate(int K) const {
        if (r < 1 || r > K) throw ConfigError("BoundQuery: r must lie in [1, K]");
        if (U0.cols() != V0.cols()) throw StructuralError("BoundQuery: U0 and V0 widths differ");
        if (U0.cols() < r || U0.cols() > K) throw StructuralError("BoundQuery: width must lie in [r, K]");
        require_finite(U0, "BoundQuery U0");
        require_finite(V0, "BoundQuery V0");
        if ((U0.array() < 0.0).any() || (V0.array() < 0.0).any()) {
            throw DomainError("BoundQuery: negative entry");
        }
        const Eigen::Index pad = U0.cols() - r;
        if (pad > 0 && (U0.rightCols(pad).any() || V0.rightCols(pad).any())) {
            throw DomainError("BoundQuery: columns beyond r must be zero");
        }
        if (L) {
            if (!(*L > 0.0)) throw DomainError("BoundQuery: L must be > 0");
            if (U0.maxCoeff() > *L || V0.maxCoeff() > *L) throw DomainError("BoundQuery: entry exceeds L");
        }
    }
};

/// The summands of the oracle bound for one comparison factorization.
struct BoundBreakdown {
    double approx_error = 0.0;
    double complexity_term = 0.0;
    double u_tail_term = 0.0;
    double v_tail_term = 0.0;
    double beta_term = 0.0;
    double residual_terms = 0.0;
    double total = 0.0;
};

namespace detail {

inline void require_complete(const PriorConstants& pc) {
    if (!pc.S_f) throw ConfigError("bound: second moment S_f diverges for " + pc.element.name());
    if (!pc.log_alpha) throw ConfigError("bound: no prior-mass constant alpha for this hyperprior");
}

// 8 sigma^2 r + 4 sigma^2 K log(1/alpha) + 4 sigma^2 log 4
inline double residual_terms(double sigma2, int r, int K, double log_alpha) {
    return 8.0 * sigma2 * r - 4.0 * sigma2 * K * log_alpha + 4.0 * sigma2 * std::log(4.0);
}

// 4 sigma^2 sum_{rows, l <= r} log(1 / f~(X_il + sqrt(sigma))); +inf when f~ vanishes.
inline double tail_term(const Matrix& X, int r, double sigma2, const PriorConstants& pc) {
    const double shift = std::sqrt(std::sqrt(sigma2));
    double s = 0.0;
    for (Eigen::Index ell = 0; ell < r; ++ell) {
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            s -= pc.log_f_tilde(X(i, ell) + shift);
        }
    }
    return 4.0 * sigma2 * s;
}

} // namespace detail

/**
 * Evaluates the bracketed right-hand side of the oracle inequality for one
 * comparison factorization (U0, V0) in M_r:
 *
 *   ||U0 V0^T - M||^2
 *   + 8 s2 (m1 v m2) r log( sqrt(2 (m1 v m2) / r) A / (sigma C_f) )
 *   + 4 s2 sum log 1/f~(U0_il + sqrt sigma) + 4 s2 sum log 1/f~(V0_jl + sqrt sigma)
 *   + 4 s2 beta K log( 2 S_f sqrt(m1 m2) A / (r sigma) )
 *   + 8 s2 r + 4 s2 K log(1/alpha) + 4 s2 log 4,
 *
 * with s2 = sigma^2 and A = (||U0||_F + ||V0||_F + sqrt(sigma K r))^2.
 */
inline BoundBreakdown theorem_bound(const BoundQuery& q, const Matrix& M, const ModelConfig& config,
                                    const PriorConstants& pc) {
    config.validate();
    q.validate(config.K);
    detail::require_complete(pc);
    if (q.U0.rows() != M.rows() || q.V0.rows() != M.cols()) {
        throw StructuralError("theorem_bound: (U0, V0) do not match the shape of M");
    }
    const double s2 = config.sigma2;
    const double sigma = std::sqrt(s2);
    const int K = config.K;
    const int r = q.r;
    const double m1 = static_cast<double>(M.rows());
    const double m2 = static_cast<double>(M.cols());
    const double m = std::max(m1, m2);
    const double norms = q.U0.norm() + q.V0.norm() + std::sqrt(sigma * K * r);
    const double A = norms * norms;

    BoundBreakdown b;
    b.approx_error = (q.U0 * q.V0.transpose() - M).squaredNorm();
    b.complexity_term = 8.0 * s2 * m * r * std::log(std::sqrt(2.0 * m / r) * A / (sigma * pc.C_f));
    b.u_tail_term = detail::tail_term(q.U0, r, s2, pc);
    b.v_tail_term = detail::tail_term(q.V0, r, s2, pc);
    b.beta_term = pc.beta == 0.0
                      ? 0.0
                      : 4.0 * s2 * pc.beta * K * std::log(2.0 * *pc.S_f * std::sqrt(m1 * m2) * A / (r * sigma));
    b.residual_terms = detail::residual_terms(s2, r, K, *pc.log_alpha);
    b.total = b.approx_error + b.complexity_term + b.u_tail_term + b.v_tail_term + b.beta_term + b.residual_terms;
    return b;
}

/**
 * Right-hand side of the bounded-entry form of the inequality, without the
 * data-dependent ||U0 V0^T - M||^2 term (the caller adds it):
 *
 *   8 s2 (m1 v m2) r log( 2 (L^2 + sigma) (m1 m2)^3 / (sigma C_f f~(L + sqrt sigma)) )
 *   + 4 s2 beta K log( 2 S_f (L^2 + sigma) (m1 m2)^3 / sigma )
 *   + 8 s2 r + 4 s2 K log(1/alpha) + 4 s2 log 4.
 */
inline double corollary_bound(int r, double L, int K, Eigen::Index m1, Eigen::Index m2, const ModelConfig& config,
                              const PriorConstants& pc) {
    config.validate();
    detail::require_complete(pc);
    if (!(L > 0.0)) throw DomainError("corollary_bound: L must be > 0");
    if (r < 1 || r > K) throw ConfigError("corollary_bound: r must lie in [1, K]");
    const double s2 = config.sigma2;
    const double sigma = std::sqrt(s2);
    const double m = static_cast<double>(std::max(m1, m2));
    const double log_core = std::log(2.0) + std::log(L * L + sigma) +
                            3.0 * std::log(static_cast<double>(m1) * static_cast<double>(m2)) - std::log(sigma);
    const double complexity =
        8.0 * s2 * m * r * (log_core - std::log(pc.C_f) - pc.log_f_tilde(L + std::sqrt(sigma)));
    const double beta_term = pc.beta == 0.0 ? 0.0 : 4.0 * s2 * pc.beta * K * (log_core + std::log(*pc.S_f));
    return complexity + beta_term + detail::residual_terms(s2, r, K, *pc.log_alpha);
}

struct BestBound {
    BoundBreakdown breakdown;
    std::size_t index = 0;
};

/// Smallest total over the candidates; ties go to the lowest index.
inline BestBound best_bound_over_grid(const Matrix& M, const ModelConfig& config, const PriorConstants& pc,
                                      const std::vector<BoundQuery>& candidates) {
    if (candidates.empty()) {
        throw ConfigError("best_bound_over_grid: no candidates");
    }
    BestBound best;
    best.breakdown = theorem_bound(candidates[0], M, config, pc);
    for (std::size_t k = 1; k < candidates.size(); ++k) {
        const BoundBreakdown b = theorem_bound(candidates[k], M, config, pc);
        if (b.total < best.breakdown.total) {
            best.breakdown = b;
            best.index = k;
        }
    }
    return best;
}

namespace detail {

inline nlohmann::json bound_number(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

} // namespace detail

/// One key per summand; non-finite values are written as the strings "inf" / "-inf" / "nan".
inline nlohmann::json to_json(const BoundBreakdown& b) {
    return nlohmann::json{{"approx_error", detail::bound_number(b.approx_error)},
                          {"complexity_term", detail::bound_number(b.complexity_term)},
                          {"u_tail_term", detail::bound_number(b.u_tail_term)},
                          {"v_tail_term", detail::bound_number(b.v_tail_term)},
                          {"beta_term", detail::bound_number(b.beta_term)},
                          {"residual_terms", detail::bound_number(b.residual_terms)},
                          {"total", detail::bound_number(b.total)}};
}

} // namespace bnmf
