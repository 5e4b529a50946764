#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace magcal {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidParams,
  kInvalidInput,
  kInsufficientData,
  kEmptyDataset,
  kDegenerateGeometry,
  kNotAnEllipsoid,
  kFieldInclinationOutOfRange,
  kInvalidState,
  kInsufficientOrientations,
  kParse,
  kIo,
  kSchema,
  kUsage,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidParams: return "invalid-params";
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kEmptyDataset: return "empty-dataset";
    case ErrorCode::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorCode::kNotAnEllipsoid: return "not-an-ellipsoid";
    case ErrorCode::kFieldInclinationOutOfRange: return "field-inclination-out-of-range";
    case ErrorCode::kInvalidState: return "invalid-state";
    case ErrorCode::kInsufficientOrientations: return "insufficient-orientations";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kUsage: return "usage";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace magcal
