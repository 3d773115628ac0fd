#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pacer/backend.h"
#include "pacer/extraction.h"

namespace pacer {

struct ScreeningConfig {
  size_t n_try = 256;
  size_t n_init = 64;
  double eta = 10.0;  // keep the top eta% of warmup stabilities

  // Throws kConfig when n_init > n_try, n_init == 0 or eta outside (0,100).
  void validate() const;
};

// Decoding settings shared by every attempt of a run.
struct SamplingParams {
  size_t k = 5;
  size_t window = 1024;
  uint32_t max_tokens = 32768;
  double temperature = 0.6;
  double top_p = 0.95;
  std::string model_name;
  size_t parallel = 8;
};

struct Threshold {
  double s = 0.0;
  std::vector<double> warmup_stabilities;
};

enum class TraceOrigin { kWarmup, kOnline };
enum class TraceStatus { kCompleted, kEarlyStopped, kFailed };

const char* to_string(TraceOrigin origin);
const char* to_string(TraceStatus status);

struct Trace {
  uint64_t trace_id = 0;  // equals the request sequence number
  TraceOrigin origin = TraceOrigin::kWarmup;
  std::string text;
  std::optional<CanonicalAnswer> answer;  // never set unless completed
  double stability = 0.0;                 // S(tau); for early stops, S at the stop step
  TraceStatus status = TraceStatus::kCompleted;
  uint64_t generated_tokens = 0;
  FinishReason finish_reason = FinishReason::kStop;
  std::string error;  // failed attempts only
};

struct StablePool {
  std::vector<Trace> entries;
  Threshold threshold;

  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// Nearest-rank (100 - eta)th percentile: sort ascending and take the element
// at 1-based rank ceil((100 - eta) / 100 * n). Throws kInsufficientWarmup
// on an empty list.
Threshold estimate_threshold(std::span<const double> warmup_stabilities,
                             double eta);

// Early stop fires strictly below the threshold.
inline bool should_stop(double current_stability, const Threshold& threshold) {
  return current_stability < threshold.s;
}

// Completed warmup traces with S >= s, then every completed online survivor.
// Survivors are not re-filtered: the online rule already enforced s.
StablePool build_pool(std::span<const Trace> warmup,
                      std::span<const Trace> survivors,
                      const Threshold& threshold);

struct Phase1Result {
  StablePool pool;
  Threshold threshold;
  std::vector<Trace> warmup;  // every warmup attempt, index == sequence
  std::vector<Trace> online;  // every online attempt, in sequence order
  uint64_t warmup_tokens = 0;
  uint64_t online_tokens = 0;
};

// Decodes one attempt. With a threshold, the stream is cancelled at the
// first step whose prefix stability falls below it. Backend errors mark the
// trace failed with its tokens so far; kScriptedMiss and kUnsupportedBackend
// propagate.
Trace run_attempt(Backend& backend, const GenerationRequest& request,
                  const SamplingParams& params, TraceOrigin origin,
                  const std::optional<Threshold>& threshold);

GenerationRequest make_request(const std::string& prompt,
                               const SamplingParams& params, uint64_t sequence);

// Warmup (sequences 0..n_init-1) runs to completion, the threshold is
// published, then online attempts (sequences n_init..n_try-1) run with
// early stopping. Throws kInsufficientData if every warmup attempt failed,
// since no threshold exists and online attempts cannot be screened.
Phase1Result run_phase1(const ScreeningConfig& config,
                        const SamplingParams& params, Backend& backend,
                        const std::string& prompt);

}  // namespace pacer
