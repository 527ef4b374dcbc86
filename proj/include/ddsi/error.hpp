#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ddsi {

enum class Errc {
  MalformedLine,
  NonDenseDocids,
  EmptyDocument,
  GoldDocidOutOfRange,
  InvalidConfig,
  InvalidDims,
  EmptyQuery,
  TokenOutOfRange,
  KOutOfRange,
  KTooSmall,
  ZeroVector,
  NonFiniteGradient,
  ShapeMismatch,
  EmptyRun,
  TooFewDocs,
  EmptyInput,
  CheckpointVersionMismatch,
  ColumnMismatch,
  Io,
};

const char* errc_name(Errc code);

/// Configuration and usage errors map to exit code 2, everything else to 1.
bool is_config_error(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::int64_t detail = -1)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  /// Line number, docid or index the error refers to; -1 when not applicable.
  std::int64_t detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::int64_t detail_;
};

}  // namespace ddsi
