#include "malfuse/error.hpp"

namespace malfuse {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NoOpcodesFound: return "NoOpcodesFound";
    case ErrorKind::WidthMismatch: return "WidthMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::SingleClassInput: return "SingleClassInput";
    case ErrorKind::PoolTooSmall: return "PoolTooSmall";
    case ErrorKind::IdSetMismatch: return "IdSetMismatch";
    case ErrorKind::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::StageError: return "StageError";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownSubcommand:
    case ErrorKind::ConfigError:
      return 2;
    case ErrorKind::MalformedLine:
    case ErrorKind::EmptyFile:
    case ErrorKind::UnknownClass:
    case ErrorKind::DuplicateId:
    case ErrorKind::MissingFile:
    case ErrorKind::TooFewSamples:
    case ErrorKind::InvalidSpec:
    case ErrorKind::EmptyInput:
    case ErrorKind::NoOpcodesFound:
    case ErrorKind::IdSetMismatch:
    case ErrorKind::IoFailure:
      return 3;
    default:
      return 4;
  }
}

}  // namespace malfuse
