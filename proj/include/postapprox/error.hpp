#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace postapprox {

enum class ErrorCode {
  InvalidSample,
  InvalidWeight,
  InvalidInput,
  OutOfSupport,
  DegenerateSample,
  DegenerateCovariance,
  DegenerateInput,
  DegenerateWeights,
  InsufficientSamples,
  InsufficientTail,
  InvalidQuantile,
  InvalidPIT,
  InvalidLengthScale,
  MissingDensities,
  IllConditioned,
  InitFailure,
  StiffnessFailure,
  RegionTooSmall,
  Io,
  Format,
};

std::string_view to_string(ErrorCode code);

/// All library failures are reported through this exception; `code()` tells
/// callers which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace postapprox
