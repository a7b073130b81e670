#pragma once

#include <stdexcept>
#include <string>

namespace bnmf {

/// Shapes or dimensions that do not fit together.
class StructuralError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the support of a density or parameter range.
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Linear algebra breakdown (non-PD matrix after jitter, and the like).
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid or unsupported combination of user-facing settings.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input file. The message carries the offending line number.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

} // namespace bnmf
