#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latentrem {

/// Machine-readable error categories. The CLI maps these onto exit codes.
enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  invalid_config,
  numerical_failure,
  divergence,
  non_convergence,
  io,
  parse,
  no_events,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when two operands disagree on a size; `axis` names the offending axis.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& axis, long expected, long actual);

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

}  // namespace latentrem
