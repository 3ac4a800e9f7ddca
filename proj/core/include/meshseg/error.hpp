#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace meshseg {

/// Failure categories surfaced by every module. The enumerator name is the
/// stable, user-visible `error_kind` string written to telemetry.
enum class ErrorKind {
  // nifti-io
  TooShort,
  BadHeader,
  BadMagic,
  UnsupportedDatatype,
  BadDims,
  UnsupportedFormat,
  TruncatedData,
  ValueOutOfRange,
  GzipError,
  IoError,
  // volume
  DegenerateAffine,
  EmptyMask,
  BoxOutOfRange,
  // model
  SchemaError,
  ChannelMismatch,
  OffsetOutOfRange,
  BlobSizeMismatch,
  ChecksumMismatch,
  // engine
  ShapeMismatch,
  NegativeVariance,
  BudgetExceeded,
  // tiling
  BadCubeSize,
  OverlapDetected,
  GapDetected,
  // training
  LabelOutOfRange,
  NonFiniteLoss,
  // statistics
  UnknownField,
  ZeroMarginal,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace meshseg
