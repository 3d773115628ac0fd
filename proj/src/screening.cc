#include "pacer/screening.h"

#include <algorithm>
#include <cmath>

#include "pacer/error.h"
#include "pacer/parallel.h"
#include "pacer/stability.h"

namespace pacer {

void ScreeningConfig::validate() const {
  if (n_init == 0) throw Error(ErrorKind::kConfig, "n_init must be >= 1");
  if (n_init > n_try) throw Error(ErrorKind::kConfig, "n_init must be <= n_try");
  if (!(eta > 0.0 && eta < 100.0)) {
    throw Error(ErrorKind::kConfig, "eta must lie in (0, 100)");
  }
}

const char* to_string(TraceOrigin origin) {
  return origin == TraceOrigin::kWarmup ? "warmup" : "online";
}

const char* to_string(TraceStatus status) {
  switch (status) {
    case TraceStatus::kCompleted:
      return "completed";
    case TraceStatus::kEarlyStopped:
      return "early_stopped";
    case TraceStatus::kFailed:
      return "failed";
  }
  return "failed";
}

namespace {

// 1-based nearest rank for the p-th percentile of n values. Integer
// arithmetic whenever p*n is integral so e.g. 90% of 10 is exactly rank 9.
size_t nearest_rank(double percentile, size_t n) {
  const double scaled = percentile * static_cast<double>(n);
  const double rounded = std::round(scaled);
  size_t rank;
  if (std::abs(scaled - rounded) < 1e-9) {
    const auto num = static_cast<uint64_t>(rounded);
    rank = static_cast<size_t>((num + 99) / 100);
  } else {
    rank = static_cast<size_t>(std::ceil(scaled / 100.0));
  }
  return std::clamp<size_t>(rank, 1, n);
}

}  // namespace

Threshold estimate_threshold(std::span<const double> warmup_stabilities,
                             double eta) {
  if (warmup_stabilities.empty()) {
    throw Error(ErrorKind::kInsufficientWarmup,
                "no completed warmup traces to estimate a threshold from");
  }
  std::vector<double> sorted(warmup_stabilities.begin(),
                             warmup_stabilities.end());
  std::sort(sorted.begin(), sorted.end());
  const size_t rank = nearest_rank(100.0 - eta, sorted.size());
  return Threshold{sorted[rank - 1], std::vector<double>(warmup_stabilities.begin(),
                                                         warmup_stabilities.end())};
}

StablePool build_pool(std::span<const Trace> warmup,
                      std::span<const Trace> survivors,
                      const Threshold& threshold) {
  StablePool pool;
  pool.threshold = threshold;
  for (const auto& t : warmup) {
    if (t.status == TraceStatus::kCompleted && t.stability >= threshold.s) {
      pool.entries.push_back(t);
    }
  }
  for (const auto& t : survivors) {
    if (t.status == TraceStatus::kCompleted) pool.entries.push_back(t);
  }
  return pool;
}

GenerationRequest make_request(const std::string& prompt,
                               const SamplingParams& params, uint64_t sequence) {
  GenerationRequest r;
  r.prompt = prompt;
  r.max_tokens = params.max_tokens;
  r.temperature = params.temperature;
  r.top_p = params.top_p;
  r.top_logprobs = static_cast<uint32_t>(params.k);
  r.stream = true;
  r.model_name = params.model_name;
  r.sequence = sequence;
  return r;
}

Trace run_attempt(Backend& backend, const GenerationRequest& request,
                  const SamplingParams& params, TraceOrigin origin,
                  const std::optional<Threshold>& threshold) {
  Trace trace;
  trace.trace_id = request.sequence;
  trace.origin = origin;

  auto fail = [&](const std::string& why) {
    trace.status = TraceStatus::kFailed;
    trace.finish_reason = FinishReason::kError;
    trace.error = why;
    trace.answer.reset();
    return trace;
  };

  std::unique_ptr<TokenStream> stream;
  try {
    stream = backend.generate_stream(request);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kScriptedMiss ||
        e.kind() == ErrorKind::kUnsupportedBackend) {
      throw;
    }
    return fail(e.what());
  }

  StabilityMonitor monitor(params.window, params.k, /*keep_trajectory=*/false);
  try {
    while (auto step = stream->next()) {
      ++trace.generated_tokens;
      trace.text += step->token_text;
      const StabilityUpdate u = monitor.update(*step);
      trace.stability = u.stability;
      if (threshold && should_stop(u.stability, *threshold)) {
        stream->cancel();
        while (stream->next()) {
        }
        trace.status = TraceStatus::kEarlyStopped;
        trace.finish_reason = FinishReason::kCancelled;
        return trace;
      }
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kUnsupportedBackend) throw;
    stream->cancel();
    return fail(e.what());
  }

  trace.finish_reason = stream->finish_reason();
  if (trace.finish_reason == FinishReason::kError ||
      trace.finish_reason == FinishReason::kCancelled) {
    return fail(stream->error_message().empty() ? "stream ended abnormally"
                                                : stream->error_message());
  }
  if (trace.generated_tokens == 0) {
    return fail("stream produced no tokens");
  }
  trace.status = TraceStatus::kCompleted;
  trace.stability = monitor.current_stability();
  trace.answer = extract_answer(trace.text);
  return trace;
}

Phase1Result run_phase1(const ScreeningConfig& config,
                        const SamplingParams& params, Backend& backend,
                        const std::string& prompt) {
  config.validate();
  Phase1Result result;

  result.warmup.resize(config.n_init);
  parallel_for(config.n_init, params.parallel, [&](size_t i) {
    result.warmup[i] = run_attempt(backend, make_request(prompt, params, i),
                                   params, TraceOrigin::kWarmup, std::nullopt);
  });

  std::vector<double> stabilities;
  for (const auto& t : result.warmup) {
    result.warmup_tokens += t.generated_tokens;
    if (t.status == TraceStatus::kCompleted) stabilities.push_back(t.stability);
  }
  if (stabilities.empty()) {
    throw Error(ErrorKind::kInsufficientData,
                "every warmup attempt failed; no threshold can be estimated");
  }
  result.threshold = estimate_threshold(stabilities, config.eta);

  const size_t n_online = config.n_try - config.n_init;
  result.online.resize(n_online);
  const Threshold threshold = result.threshold;
  parallel_for(n_online, params.parallel, [&](size_t i) {
    const uint64_t seq = config.n_init + i;
    result.online[i] = run_attempt(backend, make_request(prompt, params, seq),
                                   params, TraceOrigin::kOnline, threshold);
  });

  std::vector<Trace> survivors;
  for (const auto& t : result.online) {
    result.online_tokens += t.generated_tokens;
    if (t.status == TraceStatus::kCompleted) survivors.push_back(t);
  }
  result.pool = build_pool(result.warmup, survivors, result.threshold);
  return result;
}

}  // namespace pacer
