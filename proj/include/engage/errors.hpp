#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace engage {

/// Machine-readable failure codes shared by all pipeline stages.
enum class Errc {
  // input validation / parsing
  malformed_line,
  confidence_out_of_range,
  non_monotonic_frame_index,
  empty_session,
  // data contracts
  all_joints_missing,
  empty_track,
  empty_window,
  empty_predictions,
  empty_dataset,
  empty_input,
  label_out_of_range,
  shape_mismatch,
  dimension_mismatch,
  length_mismatch,
  single_class_data,
  invalid_mix,
  bad_config,
  // serialized artifacts
  bad_magic,
  version_mismatch,
  truncated_file,
  io_failure,
  // numerics
  no_convergence,
};

/// Exception carrying an Errc plus, for line-oriented inputs, the 1-based line number.
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message, std::size_t line = 0)
      : std::runtime_error(std::move(message)), code_(code), line_(line) {}

  Errc code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Errc code_;
  std::size_t line_;
};

/// CLI exit code for a failure class: 2 for data/validation, 3 for numeric failures.
inline int exit_code_for(Errc code) noexcept {
  return code == Errc::no_convergence ? 3 : 2;
}

}  // namespace engage
