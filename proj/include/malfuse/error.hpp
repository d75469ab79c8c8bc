#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace malfuse {

enum class ErrorKind {
  // corpus
  MalformedLine,
  EmptyFile,
  UnknownClass,
  DuplicateId,
  MissingFile,
  TooFewSamples,
  InvalidSpec,
  // features
  EmptyInput,
  NoOpcodesFound,
  WidthMismatch,
  IoFailure,
  // tensor-nn
  ShapeMismatch,
  BatchTooSmall,
  DivergedLoss,
  VersionMismatch,
  CorruptCheckpoint,
  // svm / selection / pipeline
  SingleClassInput,
  PoolTooSmall,
  IdSetMismatch,
  // cli
  UnknownSubcommand,
  ConfigError,
  StageError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the
/// CLI's exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 2 config error, 3 data error, 4 stage failure.
int exit_code_for(ErrorKind kind);

}  // namespace malfuse
