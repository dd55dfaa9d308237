#include "prolix/errors.hpp"

namespace prolix {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InvalidToken: return "InvalidToken";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::CapabilityUnsupported: return "CapabilityUnsupported";
    case ErrorKind::EmptyBudget: return "EmptyBudget";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::OracleTooLarge: return "OracleTooLarge";
    case ErrorKind::MeterBusy: return "MeterBusy";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::AuthFailure: return "AuthFailure";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::Transport: return "Transport";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::MissingPrerequisite: return "MissingPrerequisite";
    case ErrorKind::RuntimeFailure: return "RuntimeFailure";
  }
  return "Unknown";
}

}  // namespace prolix
