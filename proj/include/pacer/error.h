#pragma once

#include <stdexcept>
#include <string>

namespace pacer {

enum class ErrorKind {
  kMalformedStep,
  kEmptyTrace,
  kInsufficientWarmup,
  kInsufficientData,
  kExtractionFailure,
  kNoCandidates,
  kInvariantViolation,
  kDomain,
  kUnsupportedBackend,
  kBackend,
  kScriptedMiss,
  kStore,
  kConfig,
};

const char* to_string(ErrorKind kind);

// Single exception type for the engine; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pacer
