#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "bnmf/core.hpp"

namespace bnmf::io {

// Matrix CSV: first line "rows,cols", then one comma-separated row per line.
// Values use the shortest decimal form that round-trips exactly.

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void write_matrix(std::ostream& os, const Matrix& A) {
    os << A.rows() << ',' << A.cols() << '\n';
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
            if (j) os << ',';
            os << format_double(A(i, j));
        }
        os << '\n';
    }
}

inline void save_matrix(const std::string& path, const Matrix& A) {
    require_finite(A, "save_matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    write_matrix(out, A);
    if (!out) {
        throw std::runtime_error("write to '" + path + "' failed");
    }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
}

template <class T>
T parse_number(std::string_view tok, std::size_t line, const char* what) {
    tok = trim(tok);
    T v{};
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw ParseError(std::string("cannot parse ") + what + " '" + std::string(tok) + "'", line);
    }
    return v;
}

} // namespace detail

inline Matrix read_matrix(std::istream& in) {
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) {
        throw ParseError("missing 'rows,cols' header", lineno);
    }
    std::string_view header = detail::trim(line);
    const auto comma = header.find(',');
    if (comma == std::string_view::npos) {
        throw ParseError("header must be 'rows,cols'", lineno);
    }
    const long rows = detail::parse_number<long>(header.substr(0, comma), lineno, "row count");
    const long cols = detail::parse_number<long>(header.substr(comma + 1), lineno, "column count");
    if (rows <= 0 || cols <= 0) {
        throw ParseError("rows and cols must be positive", lineno);
    }
    Matrix A(rows, cols);
    for (long i = 0; i < rows; ++i) {
        ++lineno;
        if (!std::getline(in, line)) {
            throw ParseError("expected " + std::to_string(rows) + " data rows, found " + std::to_string(i), lineno);
        }
        std::string_view rest = line;
        long j = 0;
        for (;;) {
            const auto next = rest.find(',');
            const std::string_view tok = rest.substr(0, next);
            if (j >= cols) {
                throw ParseError("more than " + std::to_string(cols) + " values", lineno);
            }
            const double v = detail::parse_number<double>(tok, lineno, "value");
            if (!std::isfinite(v)) {
                throw DomainError("line " + std::to_string(lineno) + ": non-finite value");
            }
            A(i, j++) = v;
            if (next == std::string_view::npos) break;
            rest.remove_prefix(next + 1);
        }
        if (j != cols) {
            throw ParseError("expected " + std::to_string(cols) + " values, found " + std::to_string(j), lineno);
        }
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (!detail::trim(line).empty()) {
            throw ParseError("data beyond the declared " + std::to_string(rows) + " rows", lineno);
        }
    }
    return A;
}

inline Matrix load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "'");
    }
    return read_matrix(in);
}

} // namespace bnmf::io
