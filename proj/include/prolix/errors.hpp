#pragma once

#include <stdexcept>
#include <string>

namespace prolix {

enum class ErrorKind {
  EmptyInput,
  InvalidToken,
  ContextOverflow,
  CapabilityUnsupported,
  EmptyBudget,
  InvalidConfig,
  DimensionMismatch,
  OracleTooLarge,
  MeterBusy,
  Timeout,
  AuthFailure,
  MalformedResponse,
  Transport,
  ConfigError,
  MissingPrerequisite,
  RuntimeFailure,
};

const char* error_kind_name(ErrorKind kind);

/// Base for all toolkit errors; `kind()` gives the machine-readable category.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

#define PROLIX_DEFINE_ERROR(Name, Kind)                                                           \
  class Name : public Error {                                                                     \
  public:                                                                                         \
    explicit Name(const std::string& message) : Error(ErrorKind::Kind, message) {}                \
  }

PROLIX_DEFINE_ERROR(EmptyInputError, EmptyInput);
PROLIX_DEFINE_ERROR(InvalidTokenError, InvalidToken);
PROLIX_DEFINE_ERROR(ContextOverflowError, ContextOverflow);
PROLIX_DEFINE_ERROR(CapabilityUnsupportedError, CapabilityUnsupported);
PROLIX_DEFINE_ERROR(EmptyBudgetError, EmptyBudget);
PROLIX_DEFINE_ERROR(InvalidConfigError, InvalidConfig);
PROLIX_DEFINE_ERROR(DimensionMismatchError, DimensionMismatch);
PROLIX_DEFINE_ERROR(OracleTooLargeError, OracleTooLarge);
PROLIX_DEFINE_ERROR(MeterBusyError, MeterBusy);
PROLIX_DEFINE_ERROR(TimeoutError, Timeout);
PROLIX_DEFINE_ERROR(AuthFailureError, AuthFailure);
PROLIX_DEFINE_ERROR(MalformedResponseError, MalformedResponse);
PROLIX_DEFINE_ERROR(ConfigError, ConfigError);
PROLIX_DEFINE_ERROR(MissingPrerequisiteError, MissingPrerequisite);
PROLIX_DEFINE_ERROR(RuntimeFailureError, RuntimeFailure);

#undef PROLIX_DEFINE_ERROR

/// Transport failures carry the number of attempts made before giving up.
class TransportError : public Error {
public:
  TransportError(const std::string& message, int attempts)
      : Error(ErrorKind::Transport, message + " (attempts: " + std::to_string(attempts) + ")"),
        attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

private:
  int attempts_;
};

}  // namespace prolix
