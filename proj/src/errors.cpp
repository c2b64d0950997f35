#include "sqens/errors.hpp"

namespace sqens {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::degenerate_grid: return "degenerate-grid";
    case ErrorKind::out_of_range: return "out-of-range";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::non_differentiable: return "non-differentiable";
    case ErrorKind::non_finite: return "non-finite";
    case ErrorKind::internal_invariant: return "internal-invariant";
    case ErrorKind::version_mismatch: return "version-mismatch";
    case ErrorKind::corrupt_file: return "corrupt-file";
    case ErrorKind::wrong_magic: return "wrong-magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::label_out_of_range: return "label-out-of-range";
    case ErrorKind::count_mismatch: return "count-mismatch";
    case ErrorKind::insufficient_data: return "insufficient-data";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace sqens
