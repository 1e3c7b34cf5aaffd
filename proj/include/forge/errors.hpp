#pragma once

#include <stdexcept>
#include <string>

namespace forge {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed container: dimension mismatch, width violation, bad parameter.
struct StructureError : Error {
  using Error::Error;
};

// Requested an inverse that does not exist (singular map, non-square net).
struct NonInvertibleError : Error {
  using Error::Error;
};

// Bad file contents: unknown schema, inconsistent shapes on load.
struct SchemaError : Error {
  using Error::Error;
};

// Expression text rejected; `pos` is the byte offset of the offending token.
struct ParseError : Error {
  std::size_t pos;
  ParseError(const std::string& msg, std::size_t p) : Error(msg), pos(p) {}
};

// Evaluation left the representable range (division by zero, inf/nan).
struct EvalDomainError : Error {
  using Error::Error;
};

// A numeric check that must hold failed (e.g. slope bound not satisfied).
struct VerificationError : Error {
  using Error::Error;
};

// Iteration budget ran out before the requested tolerance was met.
struct ToleranceUnreachable : Error {
  double best_error;
  ToleranceUnreachable(const std::string& msg, double best)
      : Error(msg), best_error(best) {}
};

// Assembled pipeline missed its total error budget; carries stage errors.
struct BudgetExceeded : Error {
  double lift_error, flow_error, disc_error;
  BudgetExceeded(const std::string& msg, double el, double ef, double ed)
      : Error(msg), lift_error(el), flow_error(ef), disc_error(ed) {}
};

// Caller violated a documented precondition.
struct PreconditionViolated : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace forge
