#pragma once

#include <stdexcept>
#include <string>

namespace sbfn {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind { config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

// Dimension mismatch between operands.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Linear system could not be factorized.
struct SolverError : NumericError {
  explicit SolverError(const std::string& what) : NumericError(what) {}
};

// Malformed input file (CSV cell, IDX header, truncated payload).
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::data, what) {}
};

}  // namespace sbfn
