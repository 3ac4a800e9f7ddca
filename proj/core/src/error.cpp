#include "meshseg/error.hpp"

namespace meshseg {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::BadHeader: return "BadHeader";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::BadDims: return "BadDims";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::TruncatedData: return "TruncatedData";
    case ErrorKind::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorKind::GzipError: return "GzipError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::DegenerateAffine: return "DegenerateAffine";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::BoxOutOfRange: return "BoxOutOfRange";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::OffsetOutOfRange: return "OffsetOutOfRange";
    case ErrorKind::BlobSizeMismatch: return "BlobSizeMismatch";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NegativeVariance: return "NegativeVariance";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::BadCubeSize: return "BadCubeSize";
    case ErrorKind::OverlapDetected: return "OverlapDetected";
    case ErrorKind::GapDetected: return "GapDetected";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::UnknownField: return "UnknownField";
    case ErrorKind::ZeroMarginal: return "ZeroMarginal";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

}  // namespace meshseg
