#include "ddsi/error.hpp"

namespace ddsi {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::NonDenseDocids: return "NonDenseDocids";
    case Errc::EmptyDocument: return "EmptyDocument";
    case Errc::GoldDocidOutOfRange: return "GoldDocidOutOfRange";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidDims: return "InvalidDims";
    case Errc::EmptyQuery: return "EmptyQuery";
    case Errc::TokenOutOfRange: return "TokenOutOfRange";
    case Errc::KOutOfRange: return "KOutOfRange";
    case Errc::KTooSmall: return "KTooSmall";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyRun: return "EmptyRun";
    case Errc::TooFewDocs: return "TooFewDocs";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::CheckpointVersionMismatch: return "CheckpointVersionMismatch";
    case Errc::ColumnMismatch: return "ColumnMismatch";
    case Errc::Io: return "IoError";
  }
  return "Unknown";
}

bool is_config_error(Errc code) {
  switch (code) {
    case Errc::InvalidConfig:
    case Errc::InvalidDims:
    case Errc::KOutOfRange:
    case Errc::KTooSmall:
      return true;
    default:
      return false;
  }
}

}  // namespace ddsi
