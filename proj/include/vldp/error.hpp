#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vldp {

enum class ErrorCode {
  invalid_kernel,
  dimension,
  admissibility,
  unsupported_domain,
  divergence,
  non_convergence,
  singular_volatility,
  unsupported_form,
  domain,
  out_of_range,
  degenerate_limit,
  insufficient_sampling,
  config,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_kernel: return "invalid_kernel";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::admissibility: return "admissibility";
    case ErrorCode::unsupported_domain: return "unsupported_domain";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::singular_volatility: return "singular_volatility";
    case ErrorCode::unsupported_form: return "unsupported_form";
    case ErrorCode::domain: return "domain";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::degenerate_limit: return "degenerate_limit";
    case ErrorCode::insufficient_sampling: return "insufficient_sampling";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, double residual = 0.0)
      : std::runtime_error(what), code_(code), residual_(residual) {}

  ErrorCode code() const noexcept { return code_; }
  // Only meaningful for non_convergence and divergence.
  double residual() const noexcept { return residual_; }

 private:
  ErrorCode code_;
  double residual_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what, double residual = 0.0) {
  throw Error(code, what, residual);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace vldp
