#pragma once

#include <stdexcept>
#include <string>

namespace hyperdisp {

/// Machine-readable error categories; the CLI reports `code()` in its error JSON.
enum class ErrorCode {
  gamma_pole,
  nonconvergence,
  branch,
  singular_input,
  resolution,
  ill_conditioned_fit,
  near_resonance,
  continuation_boundary,
  spectral_gap,
  no_ground_state,
  exponent_mismatch,
  grid_too_coarse,
  tail_budget,
  divergence,
  precondition,
  io,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::gamma_pole: return "gamma_pole";
    case ErrorCode::nonconvergence: return "nonconvergence";
    case ErrorCode::branch: return "branch";
    case ErrorCode::singular_input: return "singular_input";
    case ErrorCode::resolution: return "resolution";
    case ErrorCode::ill_conditioned_fit: return "ill_conditioned_fit";
    case ErrorCode::near_resonance: return "near_resonance";
    case ErrorCode::continuation_boundary: return "continuation_boundary";
    case ErrorCode::spectral_gap: return "spectral_gap";
    case ErrorCode::no_ground_state: return "no_ground_state";
    case ErrorCode::exponent_mismatch: return "exponent_mismatch";
    case ErrorCode::grid_too_coarse: return "grid_too_coarse";
    case ErrorCode::tail_budget: return "tail_budget";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace hyperdisp
