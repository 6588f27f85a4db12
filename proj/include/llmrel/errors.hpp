#pragma once

#include <stdexcept>
#include <string>

namespace llmrel {

/// Input violates an operation's documented precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A chance-corrected coefficient whose expected agreement makes the
/// ratio 0/0 (P_e = 1, D_e = 0).
class UndefinedCoefficient : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed configuration file or flag combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing input data (CSV, JSON outputs of earlier phases).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace llmrel
