#include "pacer/stability.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "pacer/error.h"

namespace pacer {

double step_uncertainty(std::span<const double> topk_logprobs, size_t k) {
  if (topk_logprobs.empty() || k == 0) {
    throw Error(ErrorKind::kMalformedStep, "empty top-k logprob list");
  }
  if (topk_logprobs.size() < k) {
    throw Error(ErrorKind::kMalformedStep,
                "expected " + std::to_string(k) + " logprobs, got " +
                    std::to_string(topk_logprobs.size()));
  }
  double sum = 0.0;
  for (size_t j = 0; j < k; ++j) {
    sum += topk_logprobs[j];
  }
  // -0.0 when every entry is zero; normalize so callers see +0.
  const double u = -sum / static_cast<double>(k);
  return u == 0.0 ? 0.0 : u;
}

double step_uncertainty(const TokenStep& step, size_t k) {
  return step_uncertainty(std::span<const double>(step.topk_logprobs), k);
}

StabilityMonitor::StabilityMonitor(size_t window_size, size_t k,
                                   bool keep_trajectory)
    : k_(k), keep_trajectory_(keep_trajectory) {
  if (window_size == 0) {
    throw Error(ErrorKind::kConfig, "window size must be >= 1");
  }
  if (k == 0) {
    throw Error(ErrorKind::kConfig, "k must be >= 1");
  }
  window_.assign(window_size, 0.0);
}

size_t StabilityMonitor::window_fill() const {
  return std::min(step_count_, window_.size());
}

StabilityUpdate StabilityMonitor::update(const TokenStep& step) {
  return update_uncertainty(step_uncertainty(step, k_));
}

StabilityUpdate StabilityMonitor::update_uncertainty(double u) {
  const size_t w = window_.size();
  if (step_count_ >= w) {
    window_sum_ -= window_[head_];
  }
  window_[head_] = u;
  window_sum_ += u;
  head_ = (head_ + 1) % w;
  ++step_count_;

  if (step_count_ % w == 0) {
    // Buffer is full and head_ points at the oldest entry.
    double exact = 0.0;
    for (size_t i = 0; i < w; ++i) {
      exact += window_[(head_ + i) % w];
    }
    window_sum_ = exact;
  }

  const double fill = static_cast<double>(window_fill());
  const double windowed = window_sum_ / fill;
  prefix_max_ = std::max(prefix_max_, windowed);
  const StabilityUpdate out{windowed, 0.0 - prefix_max_};

  if (keep_trajectory_) {
    trajectory_.uncertainty.push_back(u);
    trajectory_.windowed.push_back(out.windowed);
    trajectory_.stability.push_back(out.stability);
  }
  return out;
}

StabilityTrajectory StabilityMonitor::finalize() const {
  if (step_count_ == 0) {
    throw Error(ErrorKind::kEmptyTrace, "trace has no decoding steps");
  }
  StabilityTrajectory out = trajectory_;
  out.final_stability = 0.0 - prefix_max_;
  return out;
}

StabilityTrajectory compute_trajectory(std::span<const TokenStep> steps,
                                       size_t window_size, size_t k) {
  StabilityMonitor monitor(window_size, k);
  for (const auto& step : steps) {
    monitor.update(step);
  }
  return monitor.finalize();
}

}  // namespace pacer
