#ifndef CALMAXSPRT_ERRORS_HPP
#define CALMAXSPRT_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace calmaxsprt {

/// Invalid argument outside an operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A likelihood profile carries no usable information (zero events, MLE on the grid boundary).
class UninformativeProfile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The log-likelihood is not concave around its grid maximum.
class CurvatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientControls : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Looks delivered out of order, or cumulative counts decreasing.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. line() is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace calmaxsprt

#endif
