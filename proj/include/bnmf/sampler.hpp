#pragma once

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "bnmf/core.hpp"
#include "bnmf/priors.hpp"

namespace bnmf {

// ---------------------------------------------------------------------------
// Univariate samplers
// ---------------------------------------------------------------------------

/**
 * Exact draw from N(mu, var) conditioned on [0, inf).
 *
 * Inverse CDF on the upper tail while the standardized bound is at most 5;
 * beyond that, Robert's exponential proposal with the optimal rate.
 */
inline double sample_univariate_truncnorm(double mu, double var, Rng& rng) {
    const double sd = std::sqrt(var);
    const double lower = -mu / sd; // standardized truncation point
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double z;
    if (lower <= 5.0) {
        // Upper-tail mass q = P(Z > lower); draw from (0, q] and invert.
        const double q = 0.5 * std::erfc(lower / std::numbers::sqrt2);
        double v;
        do {
            v = unif(rng);
        } while (v == 0.0);
        z = std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * v * q);
    } else {
        const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
        std::exponential_distribution<double> expo(rate);
        for (;;) {
            z = lower + expo(rng);
            const double d = z - rate;
            if (unif(rng) <= std::exp(-0.5 * d * d)) {
                break;
            }
        }
    }
    return std::max(0.0, mu + sd * z);
}

/// Inverse Gaussian IG(mu, nu) (mean mu, shape nu), Michael-Schucany-Haas transform.
inline double sample_inverse_gaussian(double mu, double nu, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double n = normal(rng);
    const double y = n * n;
    const double my = mu * y;
    // Root of the quadratic written to avoid cancellation when mu y >> nu.
    double x = mu * (1.0 - 2.0 * my / (my + std::sqrt(my * my + 4.0 * mu * nu * y)));
    if (!(x > 0.0)) {
        x = std::numeric_limits<double>::min();
    }
    if (unif(rng) <= mu / (mu + x)) {
        return x;
    }
    return mu * mu / x;
}

inline double sample_inverse_gamma(double shape, double scale, Rng& rng) {
    std::gamma_distribution<double> g(shape, 1.0);
    double draw;
    do {
        draw = g(rng);
    } while (!(draw > 0.0));
    return scale / draw;
}

// ---------------------------------------------------------------------------
// Row conditionals of U and V
// ---------------------------------------------------------------------------

/**
 * Gaussian restricted to the non-negative orthant. `precision` is the inverse
 * of `covariance`; the coordinate sampler works from it directly.
 */
struct RowConditional {
    Vector mean;
    Matrix covariance;
    Matrix precision;

    double log_density_unnormalized(const Vector& x) const {
        const Vector d = x - mean;
        return -0.5 * d.dot(precision * d);
    }
};

/**
 * Builds the conditional of every row of one factor given the other factor.
 *
 * For a row u with data y and fixed factor W the exponent is
 *   -lambda ||y - u W^T||^2 + sum_l log g_{gamma_l}(u_l),
 * a quadratic in u for the exponential and truncated-Gaussian priors. The
 * precision Q does not depend on the row, so it is factored once:
 *   exponential:     Q = 2 lambda (W^T W + j I),           Q m = 2 lambda W^T y - 1/gamma
 *   truncated Gauss: Q = 2 lambda (W^T W + j I) + 2 D^-2,  Q m = 2 lambda W^T y + 2 a / gamma
 * with D = Diag(gamma) and jitter j = rel_jitter tr(W^T W) / K.
 */
class RowConditionalBuilder {
  public:
    RowConditionalBuilder(const Matrix& W, const Vector& gamma, double lambda, const ElementPrior& prior,
                          double rel_jitter = 1e-10)
        : W_(W), lambda_(lambda) {
        if (W.cols() != gamma.size()) {
            throw StructuralError("row conditional: factor width differs from gamma length");
        }
        if (prior.is_heavy_tail()) {
            throw ConfigError("row conditional: heavy-tail prior has no Gaussian conditional");
        }
        const Eigen::Index K = W.cols();
        Matrix gram = W.transpose() * W;
        double jitter = rel_jitter * gram.trace() / static_cast<double>(K);
        if (!(jitter > 0.0)) {
            jitter = rel_jitter;
        }
        gram.diagonal().array() += jitter;
        precision_ = 2.0 * lambda * gram;
        shift_ = Vector(K);
        if (prior.is_exponential()) {
            shift_ = -gamma.cwiseInverse();
        } else {
            precision_.diagonal() += 2.0 * gamma.array().square().inverse().matrix();
            shift_ = 2.0 * prior.tg_a() * gamma.cwiseInverse();
        }
        llt_.compute(precision_);
        if (llt_.info() != Eigen::Success) {
            throw NumericalError("row conditional: precision is not positive definite");
        }
        covariance_ = llt_.solve(Matrix::Identity(K, K));
        covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval();
    }

    /// Conditional of the row whose data are `y` (length W.rows()).
    RowConditional row(const Eigen::Ref<const Vector>& y) const {
        if (y.size() != W_.rows()) {
            throw StructuralError("row conditional: data length differs from factor rows");
        }
        const Vector rhs = 2.0 * lambda_ * (W_.transpose() * y) + shift_;
        return RowConditional{llt_.solve(rhs), covariance_, precision_};
    }

    Vector mean(const Eigen::Ref<const Vector>& y) const {
        return llt_.solve(2.0 * lambda_ * (W_.transpose() * y) + shift_);
    }

    const Matrix& precision() const noexcept { return precision_; }

  private:
    const Matrix& W_;
    double lambda_;
    Matrix precision_;
    Matrix covariance_;
    Vector shift_;
    Eigen::LLT<Matrix> llt_;
};

/// Conditional of row i of U under an exponential element prior.
inline RowConditional row_conditional_exponential(const Matrix& Y, const Matrix& V, const Vector& gamma,
                                                  Eigen::Index i, double lambda, double rel_jitter = 1e-10) {
    RowConditionalBuilder b(V, gamma, lambda, ElementPrior::exponential(), rel_jitter);
    return b.row(Y.row(i).transpose());
}

/// Conditional of row i of U under the truncated Gaussian prior with location a.
inline RowConditional row_conditional_truncgauss(const Matrix& Y, const Matrix& V, const Vector& gamma,
                                                 Eigen::Index i, double lambda, double a,
                                                 double rel_jitter = 1e-10) {
    RowConditionalBuilder b(V, gamma, lambda, ElementPrior::truncated_gaussian(a), rel_jitter);
    return b.row(Y.row(i).transpose());
}

namespace detail {

// One coordinate-Gibbs pass over x given precision Q and mean m.
inline void truncated_mvn_sweep(const Matrix& Q, const Vector& m, Vector& x, Rng& rng) {
    const Eigen::Index K = x.size();
    for (Eigen::Index k = 0; k < K; ++k) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < K; ++j) {
            if (j != k) {
                acc += Q(k, j) * (x(j) - m(j));
            }
        }
        const double qkk = Q(k, k);
        x(k) = sample_univariate_truncnorm(m(k) - acc / qkk, 1.0 / qkk, rng);
    }
}

} // namespace detail

/**
 * Draw from the truncated Gaussian by `sweeps` coordinate-Gibbs passes started
 * at `start`. Each coordinate is redrawn from its exact univariate
 * conditional on [0, inf).
 */
inline Vector sample_truncated_mvn(const RowConditional& rc, int sweeps, const Vector& start, Rng& rng) {
    if (start.size() != rc.mean.size()) {
        throw StructuralError("sample_truncated_mvn: start has the wrong length");
    }
    if ((start.array() < 0.0).any()) {
        throw DomainError("sample_truncated_mvn: start outside the non-negative orthant");
    }
    if ((rc.precision.diagonal().array() <= 0.0).any()) {
        throw NumericalError("sample_truncated_mvn: precision is not positive definite");
    }
    Vector x = start;
    for (int s = 0; s < sweeps; ++s) {
        detail::truncated_mvn_sweep(rc.precision, rc.mean, x, rng);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Scale conditionals
// ---------------------------------------------------------------------------

/**
 * Full conditional of one scale, expressed on the variable the hyperprior
 * lives on (t = gamma, or t = gamma^2 for the truncated Gaussian).
 *
 *   exponential  + IG(a, b)            : t ~ IG(a + m1 + m2, b + S1)
 *   exponential  + Gamma(m1+m2-1/2, b) : t ~ IGauss(sqrt(S1 / b), 2 S1)
 *   trunc-gauss  + IG(a, b) on t       : t ~ IG(a + (m1+m2)/2, b + S2)
 *   trunc-gauss  + Gamma((m1+m2-1)/2, b) on t : t ~ IGauss(sqrt(S2 / b), 2 S2)
 *
 * S1 is the column sum of U and V, S2 the sum of squares. A zero S under the
 * gamma hyperprior makes the conditional improper; the prior is used instead.
 */
struct ScaleConditional {
    enum class Kind { InverseGamma, InverseGaussian, Prior };
    Kind kind = Kind::InverseGamma;
    double p1 = 0.0; // IG shape / IGauss mean / prior shape
    double p2 = 0.0; // IG scale / IGauss shape / prior rate
    bool squared = false;

    double log_density(double t) const {
        switch (kind) {
        case Kind::InverseGamma:
            return p1 * std::log(p2) - std::lgamma(p1) - (p1 + 1.0) * std::log(t) - p2 / t;
        case Kind::InverseGaussian: {
            const double d = t - p1;
            return 0.5 * std::log(p2 / (2.0 * std::numbers::pi * t * t * t)) - p2 * d * d / (2.0 * p1 * p1 * t);
        }
        default:
            return p1 * std::log(p2) - std::lgamma(p1) + (p1 - 1.0) * std::log(t) - p2 * t;
        }
    }

    /// Mode in t.
    double mode() const {
        switch (kind) {
        case Kind::InverseGamma:
            return p2 / (p1 + 1.0);
        case Kind::InverseGaussian: {
            // mu [sqrt(1 + c^2) - c] with c = 3 mu / (2 nu), in the
            // cancellation-free form mu / (sqrt(1 + c^2) + c).
            const double c = 1.5 * p1 / p2;
            return p1 / (std::sqrt(1.0 + c * c) + c);
        }
        default:
            return 0.0; // improper conditional: mass piles up at 0
        }
    }

    double sample_t(Rng& rng) const {
        switch (kind) {
        case Kind::InverseGamma:
            return sample_inverse_gamma(p1, p2, rng);
        case Kind::InverseGaussian:
            return sample_inverse_gaussian(p1, p2, rng);
        default: {
            std::gamma_distribution<double> g(p1, 1.0 / p2);
            double t;
            do {
                t = g(rng);
            } while (!(t > 0.0));
            return t;
        }
        }
    }

    double to_gamma(double t) const { return squared ? std::sqrt(t) : t; }
};

inline ScaleConditional scale_conditional(const PriorSpec& prior, const Matrix& U, const Matrix& V,
                                          Eigen::Index ell) {
    const ElementPrior& f = prior.element;
    if (f.is_heavy_tail()) {
        throw ConfigError("scale conditional: heavy-tail prior is not conjugate");
    }
    if (f.is_truncated_gaussian() && f.tg_a() != 0.0) {
        throw ConfigError("scale conditional: truncated Gaussian requires a = 0");
    }
    const double n = static_cast<double>(U.rows() + V.rows());
    const bool squared = f.is_truncated_gaussian();
    const double S = squared ? U.col(ell).squaredNorm() + V.col(ell).squaredNorm()
                             : U.col(ell).sum() + V.col(ell).sum();
    const BoundHyperprior h = prior.bound_hyper(U.rows(), V.rows());
    const double shape_shift = squared ? n / 2.0 : n;

    ScaleConditional c;
    c.squared = squared;
    if (h.kind == BoundHyperprior::Kind::InverseGamma) {
        c.kind = ScaleConditional::Kind::InverseGamma;
        c.p1 = h.shape + shape_shift;
        c.p2 = h.b + S;
    } else if (S > 0.0) {
        c.kind = ScaleConditional::Kind::InverseGaussian;
        c.p1 = std::sqrt(S / h.b);
        c.p2 = 2.0 * S;
    } else {
        c.kind = ScaleConditional::Kind::Prior;
        c.p1 = h.shape;
        c.p2 = h.b;
    }
    return c;
}

/// Draw gamma_ell from its full conditional.
inline double sample_gamma_conditional(const PriorSpec& prior, const Matrix& U, const Matrix& V,
                                       Eigen::Index ell, Rng& rng) {
    const ScaleConditional c = scale_conditional(prior, U, V, ell);
    double gamma = c.to_gamma(c.sample_t(rng));
    if (!(gamma > 0.0)) {
        gamma = std::numeric_limits<double>::min();
    }
    return gamma;
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

struct GibbsConfig {
    int n_iters = 1000;
    int burn_in = 200;
    int inner_sweeps = 4;
    std::uint64_t seed = 0;
    double jitter = 1e-10; // relative to tr(W^T W) / K

    void validate() const {
        if (n_iters <= 0) throw ConfigError("GibbsConfig: n_iters must be > 0");
        if (burn_in < 0 || burn_in >= n_iters) {
            throw ConfigError("GibbsConfig: burn_in must lie in [0, n_iters)");
        }
        if (inner_sweeps < 1) throw ConfigError("GibbsConfig: inner_sweeps must be >= 1");
        if (!(jitter > 0.0)) throw ConfigError("GibbsConfig: jitter must be > 0");
    }
};

struct ChainState {
    Factorization fac;
    int iteration = 0;
    Matrix running_sum;
    int kept = 0;

    /// Current estimate of the posterior mean of U V^T.
    Matrix estimate() const {
        if (kept == 0) {
            throw ConfigError("ChainState: no kept samples");
        }
        return running_sum / static_cast<double>(kept);
    }
};

/// -lambda ||Y - U V^T||^2 + log pi(U, V, gamma), up to the normalizer.
inline double quasi_log_posterior(const Matrix& Y, const Factorization& fac, double lambda,
                                  const PriorSpec& prior) {
    return -lambda * frobenius_sq(Y, reconstruct(fac)) + log_prior(fac, prior);
}

/**
 * One outer iteration: every row of U given (V, gamma), every row of V given
 * (new U, gamma), then every scale given (new U, new V). Samples after the
 * burn-in are added to the running sum.
 */
inline ChainState gibbs_step(ChainState state, const Matrix& Y, const ModelConfig& config,
                             const GibbsConfig& gc, const PriorSpec& prior, Rng& rng) {
    Matrix U = state.fac.U();
    Matrix V = state.fac.V();
    Vector gamma = state.fac.gamma();
    if (U.rows() != Y.rows() || V.rows() != Y.cols()) {
        throw StructuralError("gibbs_step: factor shapes do not match Y");
    }
    {
        const RowConditionalBuilder cond(V, gamma, config.lambda, prior.element, gc.jitter);
        for (Eigen::Index i = 0; i < U.rows(); ++i) {
            const Vector m = cond.mean(Y.row(i).transpose());
            Vector x = U.row(i).transpose();
            for (int s = 0; s < gc.inner_sweeps; ++s) {
                detail::truncated_mvn_sweep(cond.precision(), m, x, rng);
            }
            U.row(i) = x.transpose();
        }
    }
    {
        const RowConditionalBuilder cond(U, gamma, config.lambda, prior.element, gc.jitter);
        for (Eigen::Index j = 0; j < V.rows(); ++j) {
            const Vector m = cond.mean(Y.col(j));
            Vector x = V.row(j).transpose();
            for (int s = 0; s < gc.inner_sweeps; ++s) {
                detail::truncated_mvn_sweep(cond.precision(), m, x, rng);
            }
            V.row(j) = x.transpose();
        }
    }
    for (Eigen::Index ell = 0; ell < gamma.size(); ++ell) {
        gamma(ell) = sample_gamma_conditional(prior, U, V, ell, rng);
    }
    state.fac = Factorization(std::move(U), std::move(V), std::move(gamma));
    state.iteration += 1;
    if (state.iteration > gc.burn_in) {
        if (state.running_sum.size() == 0) {
            state.running_sum = Matrix::Zero(Y.rows(), Y.cols());
        }
        state.running_sum += reconstruct(state.fac);
        state.kept += 1;
    }
    return state;
}

struct GibbsTraceRow {
    int iteration = 0;
    double quasi_log_posterior = 0.0;
    double mse_vs_truth = std::numeric_limits<double>::quiet_NaN();
};

struct GibbsResult {
    Matrix Mhat;
    Factorization final;
    std::vector<GibbsTraceRow> trace;
};

/**
 * Runs the chain and averages U V^T over the n_iters - burn_in kept
 * iterations. When `truth` is supplied the trace also records the MSE of the
 * running mean against it.
 */
inline GibbsResult run_gibbs(const Matrix& Y, const ModelConfig& config, const GibbsConfig& gc,
                             const PriorSpec& prior, const std::optional<Matrix>& truth = std::nullopt,
                             const std::optional<Factorization>& init = std::nullopt) {
    config.validate(Y.rows(), Y.cols());
    gc.validate();
    require_finite(Y, "run_gibbs Y");
    if (prior.element.is_heavy_tail() || (prior.element.is_truncated_gaussian() && prior.element.tg_a() != 0.0)) {
        throw ConfigError("run_gibbs: the Gibbs path needs an exponential or trunc-gauss:a=0 prior");
    }
    Rng rng(gc.seed);
    ChainState state;
    state.fac = init ? *init : default_init(Y, config.K, rng);
    if (state.fac.rank_bound() != config.K) {
        throw StructuralError("run_gibbs: initial factorization width differs from K");
    }
    state.running_sum = Matrix::Zero(Y.rows(), Y.cols());

    GibbsResult result;
    result.trace.reserve(static_cast<std::size_t>(gc.n_iters));
    for (int it = 0; it < gc.n_iters; ++it) {
        state = gibbs_step(std::move(state), Y, config, gc, prior, rng);
        GibbsTraceRow row;
        row.iteration = state.iteration;
        row.quasi_log_posterior = quasi_log_posterior(Y, state.fac, config.lambda, prior);
        if (truth && state.kept > 0) {
            row.mse_vs_truth = mse(*truth, state.estimate());
        }
        result.trace.push_back(row);
    }
    if (state.kept == 0) {
        throw ConfigError("run_gibbs: no samples kept");
    }
    result.Mhat = state.estimate();
    result.final = state.fac;
    return result;
}

} // namespace bnmf
