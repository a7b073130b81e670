#pragma once

#include <cmath>
#include <limits>

namespace bnmf::special {

// Log of the regularized incomplete gamma functions P(a, x) and Q(a, x).
// Both stay finite far past the point where P or Q underflow a double,
// which the prior-mass constants need for shapes in the hundreds.

namespace detail {

// log P(a, x) by the power series, good for x < a + 1.
inline double log_gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 100000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) {
            break;
        }
    }
    return a * std::log(x) - x - std::lgamma(a) + std::log(sum);
}

// log Q(a, x) by the Legendre continued fraction (modified Lentz), x >= a + 1.
inline double log_gamma_q_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 100000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) {
            break;
        }
    }
    return a * std::log(x) - x - std::lgamma(a) + std::log(h);
}

} // namespace detail

inline double log_gamma_p(double a, double x) {
    if (x <= 0.0) {
        return -std::numeric_limits<double>::infinity();
    }
    if (x < a + 1.0) {
        return detail::log_gamma_p_series(a, x);
    }
    return std::log1p(-std::exp(detail::log_gamma_q_fraction(a, x)));
}

inline double log_gamma_q(double a, double x) {
    if (x <= 0.0) {
        return 0.0;
    }
    if (x < a + 1.0) {
        return std::log1p(-std::exp(detail::log_gamma_p_series(a, x)));
    }
    return detail::log_gamma_q_fraction(a, x);
}

} // namespace bnmf::special
