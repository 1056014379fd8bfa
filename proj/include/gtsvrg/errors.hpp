#pragma once

#include <stdexcept>
#include <string>

namespace gtsvrg {

enum class ErrorKind {
  config,
  topology,
  numeric,
  usage,
  diverged,
  precondition,
  internal,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config-error";
    case ErrorKind::topology: return "topology-error";
    case ErrorKind::numeric: return "numeric-error";
    case ErrorKind::usage: return "usage-error";
    case ErrorKind::diverged: return "diverged-error";
    case ErrorKind::precondition: return "precondition-error";
    case ErrorKind::internal: return "internal-error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind Kind>
class KindedError : public Error {
 public:
  explicit KindedError(const std::string& what) : Error(Kind, what) {}
};

using ConfigError = KindedError<ErrorKind::config>;
using TopologyError = KindedError<ErrorKind::topology>;
using NumericError = KindedError<ErrorKind::numeric>;
using UsageError = KindedError<ErrorKind::usage>;
using DivergedError = KindedError<ErrorKind::diverged>;
using PreconditionError = KindedError<ErrorKind::precondition>;
using InternalError = KindedError<ErrorKind::internal>;

}  // namespace gtsvrg
