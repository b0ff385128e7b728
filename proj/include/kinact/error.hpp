#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kinact {

enum class ErrorCode {
  kParse,
  kInvalidArgument,
  kShapeMismatch,
  kNotOrthonormal,
  kBehindCamera,
  kInsufficientViews,
  kDegenerateGeometry,
  kTimestampMismatch,
  kModelValidation,
  kNonStandingPose,
  kUnderDetermined,
  kNonFinite,
  kMissingInput,
  kEmptyInput,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a code so callers (and the
/// CLI exit-code mapping) can branch without parsing messages.
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

}  // namespace kinact
