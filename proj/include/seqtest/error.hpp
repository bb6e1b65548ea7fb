#pragma once

#include <stdexcept>
#include <string>

namespace seqtest {

enum class Errc {
  not_square,
  negative_entry,
  row_sum_out_of_tolerance,
  no_convergence,
  dimension_mismatch,
  invalid_state,
  uninitialized_state_space,
  empty_history,
  rejection_budget_exceeded,
  infinite_ratio,
  singular_system,
  length_mismatch,
  impossible_under_both,
  invalid_config,
  parse_error,
  stream_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::not_square: return "not_square";
    case Errc::negative_entry: return "negative_entry";
    case Errc::row_sum_out_of_tolerance: return "row_sum_out_of_tolerance";
    case Errc::no_convergence: return "no_convergence";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::invalid_state: return "invalid_state";
    case Errc::uninitialized_state_space: return "uninitialized_state_space";
    case Errc::empty_history: return "empty_history";
    case Errc::rejection_budget_exceeded: return "rejection_budget_exceeded";
    case Errc::infinite_ratio: return "infinite_ratio";
    case Errc::singular_system: return "singular_system";
    case Errc::length_mismatch: return "length_mismatch";
    case Errc::impossible_under_both: return "impossible_under_both";
    case Errc::invalid_config: return "invalid_config";
    case Errc::parse_error: return "parse_error";
    case Errc::stream_error: return "stream_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace seqtest
