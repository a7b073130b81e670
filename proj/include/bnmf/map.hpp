#pragma once

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "bnmf/core.hpp"
#include "bnmf/priors.hpp"
#include "bnmf/sampler.hpp"

namespace bnmf {

struct MapConfig {
    int max_outer = 500;
    int max_inner = 50;
    double step0 = 1.0;
    double backtrack = 0.5;
    double tol_obj = 1e-9;
    double tol_grad = 1e-9;
    double gamma_floor = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_outer <= 0 || max_inner <= 0) throw ConfigError("MapConfig: iteration caps must be > 0");
        if (!(step0 > 0.0)) throw ConfigError("MapConfig: step0 must be > 0");
        if (!(backtrack > 0.0 && backtrack < 1.0)) throw ConfigError("MapConfig: backtrack must lie in (0, 1)");
        if (!(tol_obj > 0.0) || !(tol_grad > 0.0)) throw ConfigError("MapConfig: tolerances must be > 0");
        if (!(gamma_floor > 0.0)) throw ConfigError("MapConfig: gamma_floor must be > 0");
    }
};

struct MapTraceRow {
    int outer = 0;
    double objective = 0.0;
    double u_improvement = 0.0;
    double v_improvement = 0.0;
    double gamma_improvement = 0.0;
    Vector gamma;
};

using MapTrace = std::vector<MapTraceRow>;

/// lambda ||Y - U V^T||^2 - log pi(U, V, gamma).
inline double map_objective(const Matrix& Y, const Matrix& U, const Matrix& V, const Vector& gamma,
                            double lambda, const PriorSpec& prior) {
    return lambda * frobenius_sq(Y, reconstruct(U, V)) - log_prior(U, V, gamma, prior);
}

inline double map_objective(const Matrix& Y, const Factorization& fac, double lambda, const PriorSpec& prior) {
    return map_objective(Y, fac.U(), fac.V(), fac.gamma(), lambda, prior);
}

/// U-block objective: lambda ||Y - U V^T||^2 - sum_{i,l} log g_{gamma_l}(U_il).
inline double block_objective(const Matrix& Y, const Matrix& U, const Matrix& V, const Vector& gamma,
                              double lambda, const ElementPrior& prior) {
    double s = lambda * (Y - U * V.transpose()).squaredNorm();
    for (Eigen::Index ell = 0; ell < U.cols(); ++ell) {
        const double g = gamma(ell);
        const double log_g = std::log(g);
        for (Eigen::Index i = 0; i < U.rows(); ++i) {
            s -= prior.log_density_unchecked(U(i, ell) / g) - log_g;
        }
    }
    return s;
}

/// Gradient of the U-block objective. Call with (Y^T, V, U) for the V block.
inline Matrix grad_U(const Matrix& Y, const Matrix& U, const Matrix& V, const Vector& gamma, double lambda,
                     const ElementPrior& prior) {
    Matrix G = -2.0 * lambda * (Y - U * V.transpose()) * V;
    for (Eigen::Index ell = 0; ell < U.cols(); ++ell) {
        for (Eigen::Index i = 0; i < U.rows(); ++i) {
            G(i, ell) += prior.neg_log_scaled_density_dx(U(i, ell), gamma(ell));
        }
    }
    return G;
}

inline Matrix grad_V(const Matrix& Y, const Matrix& U, const Matrix& V, const Vector& gamma, double lambda,
                     const ElementPrior& prior) {
    return grad_U(Y.transpose(), V, U, gamma, lambda, prior);
}

struct BlockResult {
    Matrix X;
    double objective = 0.0;
    double step = 1.0; // last accepted step, reusable as the next starting step
    int iterations = 0;
};

/**
 * Projected gradient descent on the non-negative orthant,
 * X <- max(0, X - step * grad(X)), with backtracking until the Armijo
 * condition f(X+) <= f(X) - 1e-4 <grad, X - X+> holds. Stops on max_inner,
 * a relative decrease below tol_obj, or a projected-gradient norm below
 * tol_grad. The returned objective never exceeds objective(X0).
 */
template <class Objective, class Gradient>
BlockResult projected_gradient_block(Objective&& objective, Gradient&& gradient, Matrix X0,
                                     const MapConfig& cfg, double step0) {
    constexpr int max_halvings = 60;
    constexpr double armijo = 1e-4;
    BlockResult r;
    r.X = std::move(X0);
    r.objective = objective(r.X);
    double step = step0;
    for (int t = 0; t < cfg.max_inner; ++t) {
        const Matrix G = gradient(r.X);
        const double pg = (r.X - (r.X - G).cwiseMax(0.0)).cwiseAbs().maxCoeff();
        if (pg < cfg.tol_grad) {
            break;
        }
        bool accepted = false;
        Matrix Xn;
        double fn = 0.0;
        for (int h = 0; h < max_halvings; ++h) {
            Xn = (r.X - step * G).cwiseMax(0.0);
            fn = objective(Xn);
            const double decrease = (G.array() * (r.X - Xn).array()).sum();
            if (fn <= r.objective - armijo * decrease && fn <= r.objective) {
                accepted = true;
                break;
            }
            step *= cfg.backtrack;
        }
        if (!accepted) {
            break;
        }
        const double rel = (r.objective - fn) / std::max(1.0, std::abs(r.objective));
        r.X = std::move(Xn);
        r.objective = fn;
        r.iterations = t + 1;
        if (rel < cfg.tol_obj) {
            break;
        }
        step /= cfg.backtrack;
    }
    r.step = step;
    return r;
}

template <class Objective, class Gradient>
BlockResult projected_gradient_block(Objective&& objective, Gradient&& gradient, Matrix X0,
                                     const MapConfig& cfg) {
    return projected_gradient_block(std::forward<Objective>(objective), std::forward<Gradient>(gradient),
                                    std::move(X0), cfg, cfg.step0);
}

/**
 * Closed-form scale update for the four conjugate pairs: the mode of each
 * scale conditional (on gamma, or on gamma^2 followed by a square root),
 * floored at gamma_floor.
 */
inline Vector update_gamma_mode(const PriorSpec& prior, const Matrix& U, const Matrix& V,
                                double gamma_floor = 1e-8) {
    const ElementPrior& f = prior.element;
    if (f.is_heavy_tail() || (f.is_truncated_gaussian() && f.tg_a() != 0.0)) {
        throw ConfigError("update_gamma_mode: no closed-form mode for " + f.name());
    }
    Vector gamma(U.cols());
    for (Eigen::Index ell = 0; ell < U.cols(); ++ell) {
        const ScaleConditional c = scale_conditional(prior, U, V, ell);
        const double t = c.mode();
        gamma(ell) = std::max(t > 0.0 ? c.to_gamma(t) : 0.0, gamma_floor);
    }
    return gamma;
}

/// Column objective in gamma: -sum log g_gamma(U, V column) - log h.
inline double scale_objective(const PriorSpec& prior, const Matrix& U, const Matrix& V, Eigen::Index ell,
                              double gamma) {
    return -log_prior_column(U, V, gamma, ell, prior);
}

/**
 * Scale update for priors without a conjugate mode: a coarse log-grid scan
 * over [floor, 1e12] refined by Brent's method in log gamma. The current
 * value is kept unless the search finds a lower objective.
 */
inline double update_gamma_numeric(const PriorSpec& prior, const Matrix& U, const Matrix& V, Eigen::Index ell,
                                   double current, double gamma_floor) {
    auto obj = [&](double log_g) { return scale_objective(prior, U, V, ell, std::exp(log_g)); };
    const double lo = std::log(gamma_floor);
    const double hi = std::log(1e12);
    constexpr int n = 200;
    int best_k = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= n; ++k) {
        const double v = obj(lo + (hi - lo) * k / n);
        if (v < best) {
            best = v;
            best_k = k;
        }
    }
    const double a = lo + (hi - lo) * std::max(best_k - 1, 0) / n;
    const double b = lo + (hi - lo) * std::min(best_k + 1, n) / n;
    const auto [x, fx] = boost::math::tools::brent_find_minima(obj, a, b, 52);
    double cand = std::exp(x);
    double fcand = fx;
    if (best < fcand) {
        cand = std::exp(lo + (hi - lo) * best_k / n);
        fcand = best;
    }
    return fcand < obj(std::log(current)) ? cand : current;
}

struct MapResult {
    Factorization fac;
    MapTrace trace;
};

/**
 * Block coordinate descent: projected-gradient U block, projected-gradient
 * V block, then the scale update. Stops when one outer cycle lowers the
 * objective by less than tol_obj (relative) or after max_outer cycles.
 */
inline MapResult run_map(const Matrix& Y, const ModelConfig& config, const MapConfig& mc, const PriorSpec& prior,
                         const std::optional<Factorization>& init = std::nullopt) {
    config.validate(Y.rows(), Y.cols());
    mc.validate();
    require_finite(Y, "run_map Y");
    Rng rng(mc.seed);
    const Factorization start = init ? *init : default_init(Y, config.K, rng);
    if (start.rank_bound() != config.K || start.rows() != Y.rows() || start.cols() != Y.cols()) {
        throw StructuralError("run_map: initial factorization does not match Y and K");
    }
    Matrix U = start.U();
    Matrix V = start.V();
    Vector gamma = start.gamma().cwiseMax(mc.gamma_floor);
    const Matrix Yt = Y.transpose();
    const double lambda = config.lambda;
    const ElementPrior& f = prior.element;
    const bool conjugate = !(f.is_heavy_tail() || (f.is_truncated_gaussian() && f.tg_a() != 0.0));

    MapResult result;
    double obj = map_objective(Y, U, V, gamma, lambda, prior);
    double step_u = mc.step0;
    double step_v = mc.step0;
    for (int k = 1; k <= mc.max_outer; ++k) {
        MapTraceRow row;
        row.outer = k;
        const double obj_prev = obj;

        const BlockResult bu = projected_gradient_block(
            [&](const Matrix& X) { return block_objective(Y, X, V, gamma, lambda, f); },
            [&](const Matrix& X) { return grad_U(Y, X, V, gamma, lambda, f); }, U, mc, step_u);
        U = bu.X;
        step_u = bu.step;
        const double obj_u = map_objective(Y, U, V, gamma, lambda, prior);
        row.u_improvement = obj - obj_u;

        const BlockResult bv = projected_gradient_block(
            [&](const Matrix& X) { return block_objective(Yt, X, U, gamma, lambda, f); },
            [&](const Matrix& X) { return grad_U(Yt, X, U, gamma, lambda, f); }, V, mc, step_v);
        V = bv.X;
        step_v = bv.step;
        const double obj_v = map_objective(Y, U, V, gamma, lambda, prior);
        row.v_improvement = obj_u - obj_v;

        Vector next(gamma.size());
        if (conjugate) {
            next = update_gamma_mode(prior, U, V, mc.gamma_floor);
        } else {
            for (Eigen::Index ell = 0; ell < gamma.size(); ++ell) {
                next(ell) = update_gamma_numeric(prior, U, V, ell, gamma(ell), mc.gamma_floor);
            }
        }
        // Keep a column's old scale if rounding made the new one worse.
        for (Eigen::Index ell = 0; ell < gamma.size(); ++ell) {
            if (scale_objective(prior, U, V, ell, next(ell)) > scale_objective(prior, U, V, ell, gamma(ell))) {
                next(ell) = gamma(ell);
            }
        }
        gamma = next;
        obj = map_objective(Y, U, V, gamma, lambda, prior);
        row.gamma_improvement = obj_v - obj;
        row.objective = obj;
        row.gamma = gamma;
        result.trace.push_back(std::move(row));

        if ((obj_prev - obj) / std::max(1.0, std::abs(obj_prev)) < mc.tol_obj) {
            break;
        }
    }
    result.fac = Factorization(std::move(U), std::move(V), std::move(gamma));
    return result;
}

} // namespace bnmf
