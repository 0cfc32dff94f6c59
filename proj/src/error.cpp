#include "postapprox/error.hpp"

namespace postapprox {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSample: return "InvalidSample";
    case ErrorCode::InvalidWeight: return "InvalidWeight";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::OutOfSupport: return "OutOfSupport";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::DegenerateWeights: return "DegenerateWeights";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::InsufficientTail: return "InsufficientTail";
    case ErrorCode::InvalidQuantile: return "InvalidQuantile";
    case ErrorCode::InvalidPIT: return "InvalidPIT";
    case ErrorCode::InvalidLengthScale: return "InvalidLengthScale";
    case ErrorCode::MissingDensities: return "MissingDensities";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::InitFailure: return "InitFailure";
    case ErrorCode::StiffnessFailure: return "StiffnessFailure";
    case ErrorCode::RegionTooSmall: return "RegionTooSmall";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

}  // namespace postapprox
