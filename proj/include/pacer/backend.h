#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pacer/stability.h"

namespace pacer {

enum class FinishReason { kLength, kStop, kCancelled, kError };

const char* to_string(FinishReason reason);
FinishReason finish_reason_from_string(const std::string& s);

struct GenerationRequest {
  std::string prompt;
  uint32_t max_tokens = 32768;
  double temperature = 0.6;
  double top_p = 0.95;
  uint32_t top_logprobs = 5;
  bool stream = true;
  std::string model_name;
  // Position in the engine's dispatch order (warmup, online, then reviews).
  // Assigned before any concurrency so script and replay matching do not
  // depend on thread scheduling.
  uint64_t sequence = 0;
};

// A cancellable, pull-based stream of decoding steps. Each stream has exactly
// one consumer; cancel() may be called from any thread and is idempotent.
class TokenStream {
 public:
  virtual ~TokenStream() = default;

  // Next step, or nullopt once the stream has finished. Throws
  // kUnsupportedBackend if the backend does not report logprobs.
  virtual std::optional<TokenStep> next() = 0;
  virtual void cancel() = 0;
  // Valid once next() has returned nullopt.
  virtual FinishReason finish_reason() const = 0;
  // Populated when finish_reason() == kError.
  virtual std::string error_message() const { return {}; }
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::unique_ptr<TokenStream> generate_stream(
      const GenerationRequest& request) = 0;
};

struct TraceRecord {
  uint64_t trace_id = 0;
  GenerationRequest request;
  std::vector<TokenStep> steps;
  FinishReason finish_reason = FinishReason::kStop;

  std::string full_text() const;
};

// Replays canned step sequences. Scripts are matched either by the request's
// sequence number (ordered mode, the default) or by a hash of the prompt.
// Unmatched requests throw kScriptedMiss.
class ScriptedBackend : public Backend {
 public:
  struct Script {
    std::vector<TokenStep> steps;
    FinishReason finish_reason = FinishReason::kStop;
    // Emit a connection error after this many steps (simulates a dropped
    // stream). Steps beyond it are never delivered.
    std::optional<size_t> fail_after;
  };

  enum class MatchMode { kOrdered, kPromptHash };

  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<Script> ordered);

  // Ordered mode: the script served to the request with sequence `seq`.
  void set_script(uint64_t seq, Script script);
  // Prompt-hash mode: scripts for a prompt are consumed in arrival order.
  void add_prompt_script(const std::string& prompt, Script script);
  void set_match_mode(MatchMode mode) { mode_ = mode; }

  std::unique_ptr<TokenStream> generate_stream(
      const GenerationRequest& request) override;

  // Requests received so far, in arrival order.
  std::vector<GenerationRequest> requests() const;

  static uint64_t prompt_hash(const std::string& prompt);

 private:
  MatchMode mode_ = MatchMode::kOrdered;
  mutable std::mutex mu_;
  std::map<uint64_t, Script> by_sequence_;
  std::map<uint64_t, std::deque<Script>> by_prompt_;
  std::vector<GenerationRequest> requests_;
};

// Builds a script step whose logprobs are `k` copies of `logprob`, giving
// U_t = -logprob exactly.
TokenStep uniform_step(const std::string& token, double logprob, size_t k);

// Wraps another backend: quantizes logprobs to the record precision and
// appends a TraceRecord per finished stream. Records are returned sorted by
// sequence so the store layout is independent of scheduling.
class RecordingBackend : public Backend {
 public:
  explicit RecordingBackend(std::shared_ptr<Backend> inner);

  std::unique_ptr<TokenStream> generate_stream(
      const GenerationRequest& request) override;

  std::vector<TraceRecord> records() const;

 private:
  friend class RecordingStream;
  void finish(TraceRecord record);

  std::shared_ptr<Backend> inner_;
  mutable std::mutex mu_;
  std::vector<TraceRecord> records_;
};

// Serves recorded traces back by request sequence number.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(std::vector<TraceRecord> records);

  std::unique_ptr<TokenStream> generate_stream(
      const GenerationRequest& request) override;

 private:
  std::map<uint64_t, TraceRecord> by_sequence_;
};

// Logprobs are stored with 9 significant digits; this applies the same
// rounding in memory.
double quantize_logprob(double v);

}  // namespace pacer
