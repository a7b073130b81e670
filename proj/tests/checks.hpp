#pragma once

// Randomized checks shared by the unit tests and the acceptance binary. Each
// returns the worst discrepancy found so callers can compare against their
// own tolerance and print it.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bnmf/map.hpp"
#include "bnmf/priors.hpp"
#include "bnmf/sampler.hpp"
#include "oracles.hpp"

namespace checks {

using namespace bnmf;

struct Instance {
    Matrix Y, U, V;
    Vector gamma;
    double lambda;
};

inline Instance random_instance(std::mt19937_64& rng, int max_dim = 8, int max_k = 4) {
    std::uniform_int_distribution<int> dim(2, max_dim), kk(1, max_k);
    std::uniform_real_distribution<double> lam(0.3, 3.0), g(0.3, 3.0);
    Instance in;
    const int m1 = dim(rng), m2 = dim(rng);
    const int K = std::min({kk(rng), m1, m2}); // the model requires K <= min(m1, m2)
    in.Y = oracle::random_matrix(m1, m2, rng, 0.0, 3.0);
    in.U = oracle::random_matrix(m1, K, rng, 0.0, 1.5);
    in.V = oracle::random_matrix(m2, K, rng, 0.0, 1.5);
    in.gamma = Vector(K);
    for (int l = 0; l < K; ++l) in.gamma(l) = g(rng);
    in.lambda = lam(rng);
    return in;
}

// log g_gamma(x) up to a gamma-independent constant
inline double raw_log_g(const ElementPrior& f, double x, double gamma) {
    if (f.is_exponential()) return -x / gamma - std::log(gamma);
    return -x * x / (gamma * gamma) - std::log(gamma);
}

/// Worst relative mismatch between log-density differences of the U-row and
/// V-row conditionals and of the raw exponent, over `n` random instances.
inline double row_density_ratio(const ElementPrior& f, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        const Instance in = random_instance(rng);
        const auto log_g = [&](double x, double g) { return raw_log_g(f, x, g); };
        for (int side = 0; side < 2; ++side) {
            const Matrix& W = side == 0 ? in.V : in.U;
            const Matrix Yside = side == 0 ? in.Y : Matrix(in.Y.transpose());
            const Matrix& X = side == 0 ? in.U : in.V;
            const RowConditionalBuilder b(W, in.gamma, in.lambda, f);
            const Eigen::Index row = static_cast<Eigen::Index>(k % X.rows());
            const Vector y = Yside.row(row).transpose();
            const RowConditional rc = b.row(y);
            const Vector x1 = X.row(row).transpose();
            const Vector x2 = oracle::random_matrix(1, X.cols(), rng, 0.0, 2.0).row(0).transpose();
            const double lib = rc.log_density_unnormalized(x1) - rc.log_density_unnormalized(x2);
            const double raw = oracle::raw_row_exponent(y, x1, W, in.gamma, in.lambda, log_g) -
                               oracle::raw_row_exponent(y, x2, W, in.gamma, in.lambda, log_g);
            worst = std::max(worst, std::abs(lib - raw) / (1.0 + std::abs(raw)));
        }
    }
    return worst;
}

enum class GammaPath { ExpInvGamma, ExpGamma, TgInvGamma, TgGamma };

inline std::string path_name(GammaPath p) {
    switch (p) {
    case GammaPath::ExpInvGamma: return "exponential/inv-gamma";
    case GammaPath::ExpGamma: return "exponential/gamma";
    case GammaPath::TgInvGamma: return "trunc-gauss/inv-gamma";
    default: return "trunc-gauss/gamma";
    }
}

inline PriorSpec path_prior(GammaPath p, double a, double b) {
    const bool tg = p == GammaPath::TgInvGamma || p == GammaPath::TgGamma;
    const bool ig = p == GammaPath::ExpInvGamma || p == GammaPath::TgInvGamma;
    return PriorSpec{tg ? ElementPrior::truncated_gaussian(0.0) : ElementPrior::exponential(),
                     ig ? ScaleHyperprior::inverse_gamma(a, b) : ScaleHyperprior::gamma(b)};
}

// log h(t) + sum log g_{gamma(t)}(column entries), written from scratch.
inline double raw_scale_exponent(GammaPath p, double a, double b, const Matrix& U, const Matrix& V, Eigen::Index l,
                                 double t) {
    const bool tg = p == GammaPath::TgInvGamma || p == GammaPath::TgGamma;
    const bool ig = p == GammaPath::ExpInvGamma || p == GammaPath::TgInvGamma;
    const double n = static_cast<double>(U.rows() + V.rows());
    const double gamma = tg ? std::sqrt(t) : t;
    const ElementPrior f = tg ? ElementPrior::truncated_gaussian(0.0) : ElementPrior::exponential();
    double s = ig ? oracle::log_inv_gamma(t, a, b) : oracle::log_gamma_rate(t, tg ? (n - 1) / 2 : n - 0.5, b);
    for (Eigen::Index i = 0; i < U.rows(); ++i) s += raw_log_g(f, U(i, l), gamma);
    for (Eigen::Index j = 0; j < V.rows(); ++j) s += raw_log_g(f, V(j, l), gamma);
    return s;
}

/// Worst relative mismatch of log-density differences of the scale conditional.
inline double scale_density_ratio(GammaPath p, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> hp(0.2, 5.0), logt(-1.5, 1.5);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        const Instance in = random_instance(rng);
        const double a = hp(rng), b = hp(rng);
        const PriorSpec prior = path_prior(p, a, b);
        const Eigen::Index l = k % in.U.cols();
        const ScaleConditional c = scale_conditional(prior, in.U, in.V, l);
        const double centre = c.mode();
        const double t1 = centre * std::exp(logt(rng));
        const double t2 = centre * std::exp(logt(rng));
        const double lib = c.log_density(t1) - c.log_density(t2);
        const double raw = raw_scale_exponent(p, a, b, in.U, in.V, l, t1) - raw_scale_exponent(p, a, b, in.U, in.V, l, t2);
        worst = std::max(worst, std::abs(lib - raw) / (1.0 + std::abs(raw)));
    }
    return worst;
}

/// Worst relative error of the closed-form mode against a log-grid argmax of
/// the raw conditional (on t, the variable the hyperprior lives on).
inline double gamma_mode_error(GammaPath p, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> hp(0.2, 5.0);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        const Instance in = random_instance(rng);
        const double a = hp(rng), b = hp(rng);
        const PriorSpec prior = path_prior(p, a, b);
        const Vector g = update_gamma_mode(prior, in.U, in.V, 1e-300);
        const bool tg = p == GammaPath::TgInvGamma || p == GammaPath::TgGamma;
        for (Eigen::Index l = 0; l < in.U.cols(); ++l) {
            const double t_lib = tg ? g(l) * g(l) : g(l);
            const double t_grid = oracle::log_grid_argmax(
                [&](double t) { return raw_scale_exponent(p, a, b, in.U, in.V, l, t); }, 1e-6, 1e6);
            worst = std::max(worst, std::abs(t_lib - t_grid) / t_grid);
        }
    }
    return worst;
}

inline std::vector<PriorSpec> map_priors() {
    return {PriorSpec{ElementPrior::exponential(), ScaleHyperprior::gamma(2.0)},
            PriorSpec{ElementPrior::truncated_gaussian(0.0), ScaleHyperprior::inverse_gamma(1.0, 1.0)},
            PriorSpec{ElementPrior::heavy_tail(4.0), ScaleHyperprior::inverse_gamma(2.0, 1.0)}};
}

/// Worst relative error of <grad, D> against a central difference along a
/// random direction D, for both blocks.
inline double gradient_error(const ElementPrior& f, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        Instance in = random_instance(rng);
        in.U.array() += 0.05; // keep away from the boundary
        in.V.array() += 0.05;
        const double h = 1e-6;
        for (int side = 0; side < 2; ++side) {
            const Matrix Yside = side == 0 ? in.Y : Matrix(in.Y.transpose());
            const Matrix& X = side == 0 ? in.U : in.V;
            const Matrix& W = side == 0 ? in.V : in.U;
            const Matrix D = oracle::random_matrix(X.rows(), X.cols(), rng, -1.0, 1.0);
            const Matrix G = side == 0 ? grad_U(in.Y, in.U, in.V, in.gamma, in.lambda, f)
                                       : grad_V(in.Y, in.U, in.V, in.gamma, in.lambda, f);
            const double fp = block_objective(Yside, X + h * D, W, in.gamma, in.lambda, f);
            const double fm = block_objective(Yside, X - h * D, W, in.gamma, in.lambda, f);
            const double fd = (fp - fm) / (2 * h);
            const double an = (G.array() * D.array()).sum();
            worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
        }
    }
    return worst;
}

/// Largest increase of the MAP objective across any block update, scaled by
/// 1e-10 (1 + |obj|); values <= 1 pass.
inline double map_monotonicity(const PriorSpec& prior, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        std::uniform_int_distribution<int> dim(4, 12);
        const int m1 = dim(rng), m2 = dim(rng);
        const int K = std::min({3, m1, m2});
        const Matrix Y = oracle::random_matrix(m1, m2, rng, 0.0, 2.0);
        ModelConfig cfg{0.1, 2.5, K};
        MapConfig mc;
        mc.max_outer = 30;
        mc.max_inner = 20;
        mc.seed = rng();
        const MapResult r = run_map(Y, cfg, mc, prior);
        Rng init_rng(mc.seed);
        double prev = map_objective(Y, default_init(Y, K, init_rng), cfg.lambda, prior);
        for (const auto& row : r.trace) {
            const double after_u = prev - row.u_improvement;
            const double after_v = after_u - row.v_improvement;
            const double after_g = after_v - row.gamma_improvement;
            for (double d : {row.u_improvement, row.v_improvement, row.gamma_improvement}) {
                worst = std::max(worst, -d / (1e-10 * (1 + std::abs(prev))));
            }
            worst = std::max(worst, std::abs(after_g - row.objective) / (1e-10 * (1 + std::abs(prev))) - 1.0);
            prev = row.objective;
        }
    }
    return worst;
}

struct MomentResult {
    double mean = 0.0;
    double target = 0.0;
    double se = 0.0;
    double z() const { return std::abs(mean - target) / se; }
};

inline MomentResult truncnorm_mean(double mu, int n, std::uint64_t seed) {
    Rng rng(seed);
    double s = 0, s2 = 0;
    for (int k = 0; k < n; ++k) {
        const double x = sample_univariate_truncnorm(mu, 1.0, rng);
        s += x;
        s2 += x * x;
    }
    MomentResult r;
    r.mean = s / n;
    // E[X] = mu + phi(mu) / Phi(mu) for unit variance
    const double phi = std::exp(-0.5 * mu * mu) / std::sqrt(2 * std::numbers::pi);
    const double Phi = 0.5 * std::erfc(-mu / std::sqrt(2.0));
    r.target = mu + phi / Phi;
    r.se = std::sqrt((s2 / n - r.mean * r.mean) / n);
    return r;
}

inline MomentResult inverse_gaussian_mean(double mu, double nu, int n, std::uint64_t seed) {
    Rng rng(seed);
    double s = 0;
    for (int k = 0; k < n; ++k) s += sample_inverse_gaussian(mu, nu, rng);
    MomentResult r;
    r.mean = s / n;
    r.target = mu;
    r.se = std::sqrt(mu * mu * mu / nu / n);
    return r;
}

} // namespace checks
