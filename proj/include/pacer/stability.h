#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pacer {

// One decoding step as reported by the backend.
struct TokenStep {
  uint32_t step_index = 0;            // 1-based
  std::vector<double> topk_logprobs;  // natural log, descending
  std::string token_text;
};

// U_t = -(1/k) * sum of the first k log-probabilities. Entries beyond k are
// ignored. Throws kMalformedStep on an empty list or when fewer than k
// entries are present.
double step_uncertainty(std::span<const double> topk_logprobs, size_t k);
double step_uncertainty(const TokenStep& step, size_t k);

struct StabilityTrajectory {
  std::vector<double> uncertainty;   // U_t
  std::vector<double> windowed;      // mean of U over the trailing window
  std::vector<double> stability;     // S_t = -max_{r<=t} windowed_r
  double final_stability = 0.0;
};

struct StabilityUpdate {
  double windowed = 0.0;
  double stability = 0.0;
};

// Streams U_t through a ring buffer of capacity W and tracks the prefix
// maximum of the windowed mean. Partial windows (t < W) average over the
// steps seen so far.
//
// The window sum is maintained incrementally and re-summed from the buffer
// (oldest to newest) every W steps so drift stays bounded on long traces.
// One monitor per stream; not thread-safe.
class StabilityMonitor {
 public:
  StabilityMonitor(size_t window_size, size_t k, bool keep_trajectory = true);

  StabilityUpdate update(const TokenStep& step);
  // Feeds an already computed U_t.
  StabilityUpdate update_uncertainty(double u);

  // Throws kEmptyTrace when no step was seen.
  StabilityTrajectory finalize() const;

  size_t step_count() const { return step_count_; }
  size_t window_size() const { return window_.size(); }
  size_t k() const { return k_; }
  // Number of entries currently held in the window, min(t, W).
  size_t window_fill() const;
  double prefix_max_instability() const { return prefix_max_; }
  // 0 - x rather than -x so a zero instability gives +0.
  double current_stability() const { return 0.0 - prefix_max_; }

 private:
  size_t k_;
  bool keep_trajectory_;
  std::vector<double> window_;
  size_t head_ = 0;  // next slot to overwrite
  size_t step_count_ = 0;
  double window_sum_ = 0.0;
  double prefix_max_ = -std::numeric_limits<double>::infinity();
  StabilityTrajectory trajectory_;
};

// Convenience for recorded streams: runs every step through a fresh monitor.
StabilityTrajectory compute_trajectory(std::span<const TokenStep> steps,
                                       size_t window_size, size_t k);

}  // namespace pacer
