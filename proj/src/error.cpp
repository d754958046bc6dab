// SPDX-License-Identifier: Apache-2.0
#include "loretta/error.hpp"

namespace loretta {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::RankChainMismatch: return "RankChainMismatch";
    case ErrorCode::BoundaryRankNotOne: return "BoundaryRankNotOne";
    case ErrorCode::ShapeProductMismatch: return "ShapeProductMismatch";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::IndexOutOfBounds: return "IndexOutOfBounds";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SvdFailure: return "SvdFailure";
    case ErrorCode::InvalidSigma: return "InvalidSigma";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::FactorizationFailure: return "FactorizationFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteDetected: return "NonFiniteDetected";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AlreadyInjected: return "AlreadyInjected";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::NothingTrainable: return "NothingTrainable";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::CorruptPayload: return "CorruptPayload";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace loretta
