#pragma once

#include <stdexcept>
#include <string>

namespace qloss {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed case or time-series input. Carries the line (0 when unknown)
/// and the offending field path, e.g. "branches[3].r".
class ParseError : public Error {
  public:
    ParseError(const std::string& what, std::size_t line, std::string field)
        : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

  private:
    static std::string format(const std::string& what, std::size_t line, const std::string& field) {
        std::string out = "parse error";
        if (line > 0) out += " at line " + std::to_string(line);
        if (!field.empty()) out += " in '" + field + "'";
        return out + ": " + what;
    }

    std::size_t line_;
    std::string field_;
};

/// A well-formed network that violates a data-model invariant.
class ValidationError : public Error {
  public:
    using Error::Error;
};

class NotRadialError : public Error {
  public:
    using Error::Error;
};

/// Switching would split the grid.
class DisconnectionError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// Power flow did not converge or the Jacobian was singular. This is the
/// "infeasible case" counted by the experiment reports.
class ConvergenceError : public Error {
  public:
    using Error::Error;
};

class OscillationError : public Error {
  public:
    using Error::Error;
};

}  // namespace qloss
