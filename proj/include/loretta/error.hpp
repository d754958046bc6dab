// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loretta {

enum class ErrorCode {
  // tt-core
  RankChainMismatch,
  BoundaryRankNotOne,
  ShapeProductMismatch,
  NonFiniteEntry,
  IndexOutOfBounds,
  DimensionMismatch,
  SvdFailure,
  InvalidSigma,
  InvalidShape,
  // shape-registry
  FactorizationFailure,
  // autodiff
  ShapeMismatch,
  NonFiniteDetected,
  NonScalarLoss,
  // model
  InvalidConfig,
  AlreadyInjected,
  UnknownTarget,
  NothingTrainable,
  TokenOutOfRange,
  SequenceTooLong,
  // harness
  NonFiniteGradient,
  NonFiniteLoss,
  IoFailure,
  BadMagic,
  VersionUnsupported,
  CorruptPayload,
  ParseError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace loretta
