#include "pacer/error.h"

namespace pacer {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMalformedStep:
      return "malformed_step";
    case ErrorKind::kEmptyTrace:
      return "empty_trace";
    case ErrorKind::kInsufficientWarmup:
      return "insufficient_warmup";
    case ErrorKind::kInsufficientData:
      return "insufficient_data";
    case ErrorKind::kExtractionFailure:
      return "extraction_failure";
    case ErrorKind::kNoCandidates:
      return "no_candidates";
    case ErrorKind::kInvariantViolation:
      return "invariant_violation";
    case ErrorKind::kDomain:
      return "domain";
    case ErrorKind::kUnsupportedBackend:
      return "unsupported_backend";
    case ErrorKind::kBackend:
      return "backend";
    case ErrorKind::kScriptedMiss:
      return "scripted_miss";
    case ErrorKind::kStore:
      return "store";
    case ErrorKind::kConfig:
      return "config";
  }
  return "unknown";
}

}  // namespace pacer
