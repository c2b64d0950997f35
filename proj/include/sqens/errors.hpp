#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sqens {

enum class ErrorKind {
  invalid_argument,
  degenerate_grid,
  out_of_range,
  shape_mismatch,
  non_differentiable,
  non_finite,
  internal_invariant,
  version_mismatch,
  corrupt_file,
  wrong_magic,
  truncated,
  label_out_of_range,
  count_mismatch,
  insufficient_data,
  config,
  io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every recoverable failure in the library is reported through this type;
/// `kind()` lets callers (and the CLI exit-code mapping) branch on the category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace sqens
