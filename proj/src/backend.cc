#include "pacer/backend.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>

#include "pacer/error.h"

namespace pacer {

const char* to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kLength:
      return "length";
    case FinishReason::kStop:
      return "stop";
    case FinishReason::kCancelled:
      return "cancelled";
    case FinishReason::kError:
      return "error";
  }
  return "error";
}

FinishReason finish_reason_from_string(const std::string& s) {
  if (s == "length") return FinishReason::kLength;
  if (s == "stop") return FinishReason::kStop;
  if (s == "cancelled") return FinishReason::kCancelled;
  if (s == "error") return FinishReason::kError;
  throw Error(ErrorKind::kStore, "unknown finish_reason '" + s + "'");
}

std::string TraceRecord::full_text() const {
  std::string out;
  for (const auto& step : steps) out += step.token_text;
  return out;
}

double quantize_logprob(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

TokenStep uniform_step(const std::string& token, double logprob, size_t k) {
  TokenStep step;
  step.token_text = token;
  step.topk_logprobs.assign(k, logprob);
  return step;
}

namespace {

// Serves a fixed vector of steps. Shared by the scripted and replay
// backends; the only difference is how a natural end is reported.
class VectorStream : public TokenStream {
 public:
  VectorStream(std::vector<TokenStep> steps, FinishReason end_reason,
               std::optional<size_t> fail_after, uint32_t max_tokens)
      : steps_(std::move(steps)),
        end_reason_(end_reason),
        fail_after_(fail_after),
        max_tokens_(max_tokens) {}

  std::optional<TokenStep> next() override {
    if (done_) return std::nullopt;
    if (cancelled_.load()) {
      return finish(FinishReason::kCancelled);
    }
    if (fail_after_ && pos_ >= *fail_after_) {
      error_ = "scripted connection loss after step " + std::to_string(pos_);
      return finish(FinishReason::kError);
    }
    if (pos_ >= steps_.size()) {
      return finish(end_reason_);
    }
    if (pos_ >= max_tokens_) {
      return finish(FinishReason::kLength);
    }
    TokenStep step = steps_[pos_++];
    step.step_index = static_cast<uint32_t>(pos_);
    return step;
  }

  void cancel() override { cancelled_.store(true); }

  FinishReason finish_reason() const override { return reason_; }
  std::string error_message() const override { return error_; }

 private:
  std::optional<TokenStep> finish(FinishReason reason) {
    done_ = true;
    reason_ = reason;
    return std::nullopt;
  }

  std::vector<TokenStep> steps_;
  FinishReason end_reason_;
  std::optional<size_t> fail_after_;
  size_t max_tokens_;
  size_t pos_ = 0;
  bool done_ = false;
  std::atomic<bool> cancelled_{false};
  FinishReason reason_ = FinishReason::kStop;
  std::string error_;
};

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<Script> ordered) {
  for (size_t i = 0; i < ordered.size(); ++i) {
    by_sequence_[i] = std::move(ordered[i]);
  }
}

void ScriptedBackend::set_script(uint64_t seq, Script script) {
  std::lock_guard lock(mu_);
  by_sequence_[seq] = std::move(script);
}

void ScriptedBackend::add_prompt_script(const std::string& prompt,
                                        Script script) {
  std::lock_guard lock(mu_);
  by_prompt_[prompt_hash(prompt)].push_back(std::move(script));
}

uint64_t ScriptedBackend::prompt_hash(const std::string& prompt) {
  // FNV-1a, stable across platforms and runs.
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : prompt) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::unique_ptr<TokenStream> ScriptedBackend::generate_stream(
    const GenerationRequest& request) {
  Script script;
  {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
    if (mode_ == MatchMode::kOrdered) {
      auto it = by_sequence_.find(request.sequence);
      if (it == by_sequence_.end()) {
        throw Error(ErrorKind::kScriptedMiss,
                    "no script for request sequence " +
                        std::to_string(request.sequence));
      }
      script = it->second;
    } else {
      auto it = by_prompt_.find(prompt_hash(request.prompt));
      if (it == by_prompt_.end() || it->second.empty()) {
        throw Error(ErrorKind::kScriptedMiss,
                    "no script left for prompt hash " +
                        std::to_string(prompt_hash(request.prompt)));
      }
      script = std::move(it->second.front());
      it->second.pop_front();
    }
  }
  return std::make_unique<VectorStream>(std::move(script.steps),
                                        script.finish_reason,
                                        script.fail_after, request.max_tokens);
}

std::vector<GenerationRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

class RecordingStream : public TokenStream {
 public:
  RecordingStream(RecordingBackend* owner, GenerationRequest request,
                  std::unique_ptr<TokenStream> inner)
      : owner_(owner), inner_(std::move(inner)) {
    record_.trace_id = request.sequence;
    record_.request = std::move(request);
  }

  ~RecordingStream() override {
    if (!finished_) {
      // Consumer walked away after cancelling without draining.
      record_.finish_reason = FinishReason::kCancelled;
      owner_->finish(std::move(record_));
    }
  }

  std::optional<TokenStep> next() override {
    std::optional<TokenStep> step = inner_->next();
    if (!step) {
      if (!finished_) {
        finished_ = true;
        record_.finish_reason = inner_->finish_reason();
        owner_->finish(record_);
      }
      return std::nullopt;
    }
    for (double& v : step->topk_logprobs) v = quantize_logprob(v);
    record_.steps.push_back(*step);
    return step;
  }

  void cancel() override { inner_->cancel(); }
  FinishReason finish_reason() const override {
    return inner_->finish_reason();
  }
  std::string error_message() const override {
    return inner_->error_message();
  }

 private:
  RecordingBackend* owner_;
  std::unique_ptr<TokenStream> inner_;
  TraceRecord record_;
  bool finished_ = false;
};

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> inner)
    : inner_(std::move(inner)) {}

std::unique_ptr<TokenStream> RecordingBackend::generate_stream(
    const GenerationRequest& request) {
  return std::make_unique<RecordingStream>(this, request,
                                           inner_->generate_stream(request));
}

void RecordingBackend::finish(TraceRecord record) {
  std::lock_guard lock(mu_);
  records_.push_back(std::move(record));
}

std::vector<TraceRecord> RecordingBackend::records() const {
  std::lock_guard lock(mu_);
  std::vector<TraceRecord> out = records_;
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.request.sequence < b.request.sequence;
  });
  return out;
}

namespace {

class ReplayStream : public TokenStream {
 public:
  explicit ReplayStream(const TraceRecord& record)
      : inner_(record.steps,
               record.finish_reason == FinishReason::kCancelled
                   ? FinishReason::kError
                   : record.finish_reason,
               std::nullopt, record.request.max_tokens),
        recorded_cancel_(record.finish_reason == FinishReason::kCancelled) {}

  std::optional<TokenStep> next() override {
    auto step = inner_.next();
    if (!step && inner_.finish_reason() == FinishReason::kError) {
      error_ = recorded_cancel_
                   ? "replay diverged: recorded stream was cancelled here "
                     "but the engine kept reading"
                   : "recorded stream ended with an error";
    }
    return step;
  }
  void cancel() override { inner_.cancel(); }
  FinishReason finish_reason() const override {
    return inner_.finish_reason();
  }
  std::string error_message() const override { return error_; }

 private:
  VectorStream inner_;
  bool recorded_cancel_;
  std::string error_;
};

}  // namespace

ReplayBackend::ReplayBackend(std::vector<TraceRecord> records) {
  for (auto& r : records) {
    const uint64_t seq = r.request.sequence;
    by_sequence_[seq] = std::move(r);
  }
}

std::unique_ptr<TokenStream> ReplayBackend::generate_stream(
    const GenerationRequest& request) {
  auto it = by_sequence_.find(request.sequence);
  if (it == by_sequence_.end()) {
    throw Error(ErrorKind::kScriptedMiss,
                "replay store has no record for request sequence " +
                    std::to_string(request.sequence));
  }
  return std::make_unique<ReplayStream>(it->second);
}

}  // namespace pacer
