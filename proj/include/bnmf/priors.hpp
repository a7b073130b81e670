#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bnmf/core.hpp"
#include "bnmf/special.hpp"

namespace bnmf {

// ---------------------------------------------------------------------------
// Element priors f on [0, inf). The scaled density is g_s(x) = f(x / s) / s.
// ---------------------------------------------------------------------------

struct Exponential {};

/// f(x) proportional to exp(2 a x - x^2).
struct TruncatedGaussian {
    double a = 0.0;
};

/// f(x) = (zeta - 1) (1 + x)^(-zeta).
struct HeavyTail {
    double zeta = 2.0;
};

class ElementPrior {
  public:
    using Variant = std::variant<Exponential, TruncatedGaussian, HeavyTail>;

    ElementPrior() : ElementPrior(Exponential{}) {}

    explicit ElementPrior(Variant v) : v_(v) {
        if (const auto* tg = std::get_if<TruncatedGaussian>(&v_)) {
            if (!std::isfinite(tg->a) || tg->a < -25.0 || tg->a > 1e3) {
                throw DomainError("trunc-gauss: a must lie in [-25, 1000]");
            }
            log_norm_ = log_gauss_tail(0.0, tg->a);
            tilde_shift_ = std::abs(tg->a);
            tilde_log_norm_ = log_gauss_tail(tilde_shift_, tg->a);
        } else if (const auto* ht = std::get_if<HeavyTail>(&v_)) {
            if (!(ht->zeta > 1.0) || !std::isfinite(ht->zeta)) {
                throw DomainError("heavy-tail: zeta must be > 1");
            }
            log_norm_ = -std::log(ht->zeta - 1.0);
        }
    }

    static ElementPrior exponential() { return ElementPrior(Exponential{}); }
    static ElementPrior truncated_gaussian(double a) { return ElementPrior(TruncatedGaussian{a}); }
    static ElementPrior heavy_tail(double zeta) { return ElementPrior(HeavyTail{zeta}); }

    const Variant& variant() const noexcept { return v_; }

    bool is_exponential() const noexcept { return std::holds_alternative<Exponential>(v_); }
    bool is_truncated_gaussian() const noexcept {
        return std::holds_alternative<TruncatedGaussian>(v_);
    }
    bool is_heavy_tail() const noexcept { return std::holds_alternative<HeavyTail>(v_); }

    /// Location parameter a of the truncated Gaussian (0 otherwise).
    double tg_a() const noexcept {
        const auto* tg = std::get_if<TruncatedGaussian>(&v_);
        return tg ? tg->a : 0.0;
    }
    double zeta() const noexcept {
        const auto* ht = std::get_if<HeavyTail>(&v_);
        return ht ? ht->zeta : 0.0;
    }

    /// The hyperprior of a truncated-Gaussian model is placed on gamma^2.
    bool squared_scale() const noexcept { return is_truncated_gaussian(); }

    double log_density(double x) const {
        if (!(x >= 0.0)) {
            throw DomainError("element prior evaluated at a negative point");
        }
        return log_density_unchecked(x);
    }

    double log_density_unchecked(double x) const noexcept {
        switch (v_.index()) {
        case 0:
            return -x;
        case 1: {
            const double a = std::get<1>(v_).a;
            return 2.0 * a * x - x * x - log_norm_;
        }
        default:
            return -std::get<2>(v_).zeta * std::log1p(x) - log_norm_;
        }
    }

    /// log g_s(x) = log f(x / s) - log s.
    double log_scaled_density(double x, double scale) const {
        if (!(scale > 0.0)) {
            throw DomainError("scaled density: scale must be > 0");
        }
        return log_density(x / scale) - std::log(scale);
    }

    /// d/dx of -log g_s(x).
    double neg_log_scaled_density_dx(double x, double scale) const noexcept {
        switch (v_.index()) {
        case 0:
            return 1.0 / scale;
        case 1: {
            const double a = std::get<1>(v_).a;
            return -2.0 * a / scale + 2.0 * x / (scale * scale);
        }
        default:
            return std::get<2>(v_).zeta / (scale + x);
        }
    }

    /**
     * log of the non-increasing minorant density f~. Exponential and
     * heavy-tail priors are already non-increasing, so f~ = f. For the
     * truncated Gaussian f~(x) = f(x + |a|) / int_{|a|}^inf f.
     */
    double log_f_tilde(double x) const {
        if (!(x >= 0.0)) {
            throw DomainError("f~ evaluated at a negative point");
        }
        if (!is_truncated_gaussian()) {
            return log_density_unchecked(x);
        }
        const double a = tg_a();
        const double y = x + tilde_shift_;
        return 2.0 * a * y - y * y - tilde_log_norm_;
    }

    /// Second moment S_f; empty when it diverges (heavy tail with zeta <= 3).
    std::optional<double> second_moment() const {
        if (is_exponential()) {
            return 2.0;
        }
        if (is_heavy_tail() && zeta() <= 3.0) {
            return std::nullopt;
        }
        boost::math::quadrature::exp_sinh<double> integrator;
        auto integrand = [this](double x) {
            const double lf = log_density_unchecked(x);
            return x * x * std::exp(lf);
        };
        return integrator.integrate(integrand, 1e-12);
    }

    std::string name() const {
        std::ostringstream os;
        os.precision(17);
        switch (v_.index()) {
        case 0:
            os << "exponential";
            break;
        case 1:
            os << "trunc-gauss:a=" << tg_a();
            break;
        default:
            os << "heavy-tail:zeta=" << zeta();
            break;
        }
        return os.str();
    }

  private:
    // log int_c^inf exp(2 a x - x^2) dx = a^2 + log(sqrt(pi)/2 erfc(c - a)).
    static double log_gauss_tail(double c, double a) {
        return a * a + std::log(std::sqrt(std::numbers::pi) / 2.0) + std::log(std::erfc(c - a));
    }

    Variant v_;
    double log_norm_ = 0.0;
    double tilde_shift_ = 0.0;
    double tilde_log_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Scale hyperpriors h.
// ---------------------------------------------------------------------------

/// IG(a, b): density b^a / Gamma(a) x^(-a-1) exp(-b / x).
struct InverseGamma {
    double a = 1.0;
    double b = 1.0;
};

/// Gamma(shape, b) with the shape fixed by the matrix dimensions: m1 + m2 - 1/2
/// on gamma, or (m1 + m2 - 1) / 2 when placed on gamma^2.
struct GammaShape {
    double b = 1.0;
};

/// A hyperprior with every parameter resolved.
struct BoundHyperprior {
    enum class Kind { InverseGamma, Gamma };
    Kind kind = Kind::InverseGamma;
    double shape = 1.0;
    double b = 1.0; // scale of the inverse gamma, rate of the gamma
    bool squared = false;

    double log_density(double t) const {
        if (!(t > 0.0)) {
            throw DomainError("hyperprior evaluated at a non-positive point");
        }
        if (kind == Kind::InverseGamma) {
            return shape * std::log(b) - std::lgamma(shape) - (shape + 1.0) * std::log(t) - b / t;
        }
        return shape * std::log(b) - std::lgamma(shape) + (shape - 1.0) * std::log(t) - b * t;
    }

    /// log of the prior mass of the scale gamma on (0, eps].
    double log_scale_cdf(double eps) const {
        const double t = squared ? eps * eps : eps;
        if (kind == Kind::InverseGamma) {
            return special::log_gamma_q(shape, b / t);
        }
        return special::log_gamma_p(shape, b * t);
    }
};

class ScaleHyperprior {
  public:
    using Variant = std::variant<InverseGamma, GammaShape>;

    ScaleHyperprior() : ScaleHyperprior(GammaShape{}) {}

    explicit ScaleHyperprior(Variant v) : v_(v) {
        if (const auto* ig = std::get_if<InverseGamma>(&v_)) {
            if (!(ig->a > 0.0) || !(ig->b > 0.0) || !std::isfinite(ig->a) || !std::isfinite(ig->b)) {
                throw DomainError("inv-gamma: a and b must be positive");
            }
        } else if (const auto& g = std::get<GammaShape>(v_); !(g.b > 0.0) || !std::isfinite(g.b)) {
            throw DomainError("gamma: b must be positive");
        }
    }

    static ScaleHyperprior inverse_gamma(double a, double b) { return ScaleHyperprior(InverseGamma{a, b}); }
    static ScaleHyperprior gamma(double b) { return ScaleHyperprior(GammaShape{b}); }

    const Variant& variant() const noexcept { return v_; }
    bool is_inverse_gamma() const noexcept { return std::holds_alternative<InverseGamma>(v_); }

    double b() const noexcept {
        return std::visit([](const auto& h) { return h.b; }, v_);
    }

    /// Same family with its b parameter replaced.
    ScaleHyperprior with_b(double b) const {
        if (const auto* ig = std::get_if<InverseGamma>(&v_)) {
            return inverse_gamma(ig->a, b);
        }
        return gamma(b);
    }

    BoundHyperprior bind(Eigen::Index m1, Eigen::Index m2, bool squared) const {
        const double n = static_cast<double>(m1 + m2);
        if (const auto* ig = std::get_if<InverseGamma>(&v_)) {
            return {BoundHyperprior::Kind::InverseGamma, ig->a, ig->b, squared};
        }
        const double shape = squared ? (n - 1.0) / 2.0 : n - 0.5;
        return {BoundHyperprior::Kind::Gamma, shape, std::get<GammaShape>(v_).b, squared};
    }

    std::string name() const {
        std::ostringstream os;
        os.precision(17);
        if (const auto* ig = std::get_if<InverseGamma>(&v_)) {
            os << "inv-gamma:a=" << ig->a << ",b=" << ig->b;
        } else {
            os << "gamma:b=" << b();
        }
        return os.str();
    }

  private:
    Variant v_;
};

/// Log density of the hyperprior at x, with the gamma shape bound to m1 + m2 - 1/2.
inline double hyper_log_density(const ScaleHyperprior& h, Eigen::Index m1, Eigen::Index m2, double x) {
    if (!(x > 0.0)) {
        throw DomainError("hyper_log_density: x must be > 0");
    }
    return h.bind(m1, m2, false).log_density(x);
}

inline double element_log_density(const ElementPrior& p, double x) { return p.log_density(x); }

inline double scaled_log_density(const ElementPrior& p, double alpha_scale, double x) {
    return p.log_scaled_density(x, alpha_scale);
}

/// Element prior plus scale hyperprior.
struct PriorSpec {
    ElementPrior element;
    ScaleHyperprior hyper;

    BoundHyperprior bound_hyper(Eigen::Index m1, Eigen::Index m2) const {
        return hyper.bind(m1, m2, element.squared_scale());
    }

    /// log h evaluated on the variable the hyperprior lives on (gamma or gamma^2).
    double log_hyper(double gamma, Eigen::Index m1, Eigen::Index m2) const {
        const double t = element.squared_scale() ? gamma * gamma : gamma;
        return bound_hyper(m1, m2).log_density(t);
    }

    std::string name() const { return element.name() + " / " + hyper.name(); }
};

/// Sum of log g_gamma over one column of U and V plus the hyperprior term.
inline double log_prior_column(const Matrix& U, const Matrix& V, double gamma, Eigen::Index ell,
                               const PriorSpec& prior) {
    if (!(gamma > 0.0)) {
        throw DomainError("log_prior: scale must be > 0");
    }
    const ElementPrior& f = prior.element;
    const double log_scale = std::log(gamma);
    double s = 0.0;
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
        s += f.log_density(U(i, ell) / gamma) - log_scale;
    }
    for (Eigen::Index j = 0; j < V.rows(); ++j) {
        s += f.log_density(V(j, ell) / gamma) - log_scale;
    }
    return s + prior.log_hyper(gamma, U.rows(), V.rows());
}

/// log pi(U, V, gamma), additive over the K columns.
inline double log_prior(const Matrix& U, const Matrix& V, const Vector& gamma, const PriorSpec& prior) {
    if (U.cols() != V.cols() || U.cols() != gamma.size()) {
        throw StructuralError("log_prior: U, V and gamma disagree on K");
    }
    double s = 0.0;
    for (Eigen::Index ell = 0; ell < gamma.size(); ++ell) {
        s += log_prior_column(U, V, gamma(ell), ell, prior);
    }
    return s;
}

inline double log_prior(const Factorization& fac, const PriorSpec& prior) {
    return log_prior(fac.U(), fac.V(), fac.gamma(), prior);
}

// ---------------------------------------------------------------------------
// Constants consumed by the oracle bound.
// ---------------------------------------------------------------------------

struct PriorConstants {
    ElementPrior element;           ///< supplies f and f~
    std::optional<double> S_f;      ///< empty when the second moment diverges
    double C_f = 1.0;               ///< f >= C_f f~ on [0, inf)
    std::optional<double> log_alpha; ///< log of the prior-mass constant; empty when none fits
    double beta = 0.0;
    double eps_max = 0.0;           ///< upper end of the prior-mass range

    bool complete() const noexcept { return S_f.has_value() && log_alpha.has_value(); }
    double alpha() const { return std::exp(log_alpha.value()); }
    double log_f_tilde(double x) const { return element.log_f_tilde(x); }
};

namespace detail {

inline constexpr double kAlphaCap = 1.0 - 1e-9;
inline constexpr int kEpsGrid = 100;
inline constexpr int kMaxBeta = 10;

inline double fit_C_f(const ElementPrior& f) {
    if (!f.is_truncated_gaussian()) {
        return 1.0;
    }
    // f / f~ on a grid of [0, 100].
    double best = std::numeric_limits<double>::infinity();
    constexpr int n = 10000;
    for (int k = 0; k <= n; ++k) {
        const double x = 100.0 * k / n;
        best = std::min(best, f.log_density_unchecked(x) - f.log_f_tilde(x));
    }
    return std::exp(best);
}

} // namespace detail

/**
 * S_f, C_f, f~ and the prior-mass pair (alpha, beta) with
 * int_0^eps h >= alpha eps^beta for eps in (0, eps_max],
 * eps_max = sigma2 / (sqrt(2) S_f K^2).
 *
 * Gamma hyperpriors admit an exact pair: beta = the shape (times 2 on the
 * squared scale) and alpha = mass(eps_max) / eps_max^beta, since
 * mass(eps) / eps^beta decreases in eps. Inverse-gamma mass vanishes faster
 * than any power at 0, so (alpha, beta) is fitted on the grid
 * eps_k = k eps_max / 100 with beta in {0, ..., 10}.
 */
inline PriorConstants prior_constants(const PriorSpec& prior, const ModelConfig& config,
                                      Eigen::Index m1, Eigen::Index m2) {
    PriorConstants pc;
    pc.element = prior.element;
    pc.S_f = prior.element.second_moment();
    pc.C_f = detail::fit_C_f(prior.element);
    if (!pc.S_f) {
        return pc;
    }
    const double K = config.K;
    pc.eps_max = config.sigma2 / (std::sqrt(2.0) * *pc.S_f * K * K);
    const BoundHyperprior h = prior.bound_hyper(m1, m2);
    const double cap = std::log(detail::kAlphaCap);

    if (h.kind == BoundHyperprior::Kind::Gamma) {
        pc.beta = h.squared ? 2.0 * h.shape : h.shape;
        const double la = h.log_scale_cdf(pc.eps_max) - pc.beta * std::log(pc.eps_max);
        if (std::isfinite(la)) {
            pc.log_alpha = std::min(la, cap);
        }
        return pc;
    }

    std::vector<double> log_mass(detail::kEpsGrid);
    std::vector<double> log_eps(detail::kEpsGrid);
    for (int k = 0; k < detail::kEpsGrid; ++k) {
        const double eps = pc.eps_max * (k + 1) / detail::kEpsGrid;
        log_eps[k] = std::log(eps);
        log_mass[k] = h.log_scale_cdf(eps);
    }
    double best = -std::numeric_limits<double>::infinity();
    int best_beta = 0;
    for (int beta = 0; beta <= detail::kMaxBeta; ++beta) {
        double la = std::numeric_limits<double>::infinity();
        for (int k = 0; k < detail::kEpsGrid; ++k) {
            la = std::min(la, log_mass[k] - beta * log_eps[k]);
        }
        if (la > best) {
            best = la;
            best_beta = beta;
        }
    }
    if (std::isfinite(best)) {
        pc.beta = best_beta;
        pc.log_alpha = std::min(best, cap);
    }
    return pc;
}

// ---------------------------------------------------------------------------
// String forms used by the command line and config files.
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_param(std::string_view body, std::string_view key, const std::string& whole) {
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t end = body.find(',', pos);
        if (end == std::string_view::npos) end = body.size();
        const std::string_view item = body.substr(pos, end - pos);
        const std::size_t eq = item.find('=');
        if (eq != std::string_view::npos && item.substr(0, eq) == key) {
            const std::string value(item.substr(eq + 1));
            try {
                std::size_t used = 0;
                const double v = std::stod(value, &used);
                if (used != value.size()) throw std::invalid_argument("trailing");
                return v;
            } catch (const std::exception&) {
                throw ConfigError("bad value for '" + std::string(key) + "' in '" + whole + "'");
            }
        }
        pos = end + 1;
    }
    throw ConfigError("missing '" + std::string(key) + "' in '" + whole + "'");
}

} // namespace detail

inline ElementPrior parse_element_prior(const std::string& s) {
    if (s == "exponential") {
        return ElementPrior::exponential();
    }
    const auto colon = s.find(':');
    const std::string head = s.substr(0, colon);
    const std::string_view body =
        colon == std::string::npos ? std::string_view{} : std::string_view(s).substr(colon + 1);
    if (head == "trunc-gauss") {
        return ElementPrior::truncated_gaussian(detail::parse_param(body, "a", s));
    }
    if (head == "heavy-tail") {
        return ElementPrior::heavy_tail(detail::parse_param(body, "zeta", s));
    }
    throw ConfigError("unknown element prior '" + s + "'");
}

inline ScaleHyperprior parse_hyperprior(const std::string& s) {
    const auto colon = s.find(':');
    const std::string head = s.substr(0, colon);
    const std::string_view body =
        colon == std::string::npos ? std::string_view{} : std::string_view(s).substr(colon + 1);
    if (head == "inv-gamma") {
        return ScaleHyperprior::inverse_gamma(detail::parse_param(body, "a", s),
                                              detail::parse_param(body, "b", s));
    }
    if (head == "gamma") {
        return ScaleHyperprior::gamma(detail::parse_param(body, "b", s));
    }
    throw ConfigError("unknown hyperprior '" + s + "'");
}

} // namespace bnmf
