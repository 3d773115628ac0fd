#include "pacer/revision.h"

#include <algorithm>

#include "pacer/error.h"
#include "pacer/parallel.h"

namespace pacer {

const char* to_string(VoteMethod method) {
  switch (method) {
    case VoteMethod::kCwvRevised:
      return "cwv_revised";
    case VoteMethod::kCwvOriginal:
      return "cwv_original";
    case VoteMethod::kMv:
      return "mv";
  }
  return "mv";
}

int weighted_vote_labels(std::span<const int> labels,
                         std::span<const double> weights, int num_labels,
                         std::vector<double>* tally,
                         std::vector<uint64_t>* counts) {
  std::vector<double> sums(num_labels, 0.0);
  std::vector<uint64_t> n(num_labels, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    sums[labels[i]] += weights[i];
    ++n[labels[i]];
  }
  int best = -1;
  for (int a = 0; a < num_labels; ++a) {
    if (n[a] == 0) continue;
    if (best < 0 || sums[a] > sums[best] ||
        (sums[a] == sums[best] && n[a] > n[best])) {
      best = a;
    }
  }
  if (tally) *tally = std::move(sums);
  if (counts) *counts = std::move(n);
  return best;
}

VoteResult cwv(std::span<const std::string> answers,
               std::span<const double> weights, VoteMethod method) {
  if (answers.size() != weights.size()) {
    throw Error(ErrorKind::kInvariantViolation,
                "answers and weights differ in length");
  }
  if (answers.empty()) {
    throw Error(ErrorKind::kNoCandidates, "no answers to vote over");
  }
  // Dense labels in lexicographic order: a smaller label is a smaller string.
  std::vector<std::string> distinct(answers.begin(), answers.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> labels;
  labels.reserve(answers.size());
  for (const auto& a : answers) {
    labels.push_back(static_cast<int>(
        std::lower_bound(distinct.begin(), distinct.end(), a) - distinct.begin()));
  }

  std::vector<double> sums;
  std::vector<uint64_t> counts;
  const int winner = weighted_vote_labels(labels, weights,
                                          static_cast<int>(distinct.size()),
                                          &sums, &counts);
  VoteResult out;
  out.method = method;
  out.winner = distinct[winner];
  for (size_t i = 0; i < distinct.size(); ++i) {
    out.tally[distinct[i]] = sums[i];
    out.counts[distinct[i]] = counts[i];
  }
  return out;
}

VoteResult mv(std::span<const std::string> answers) {
  std::vector<double> ones(answers.size(), 1.0);
  return cwv(answers, ones, VoteMethod::kMv);
}

std::string build_review_prompt(const std::string& problem, const Trace& trace,
                                const std::string& answer,
                                const ConsensusPacket& packet,
                                size_t trace_tail_budget,
                                const TokenCounter& counter) {
  std::string out;
  out += "Problem:\n";
  out += problem;
  out += "\n\nYour previous solution:\n";
  out += truncate_rationale(trace.text, trace_tail_budget, counter);
  out += "\n\nYour current answer: ";
  out += answer;
  out += "\n\nPeer consensus:\n";
  out += render_packet(packet);
  out += "\n\n";
  out += kReviewInstruction;
  return out;
}

ReviewResult review(Backend& backend, GenerationRequest request, size_t l_rev,
                    const std::string& original_answer) {
  request.max_tokens = static_cast<uint32_t>(l_rev);
  ReviewResult result;
  result.revised_answer = original_answer;

  std::string text;
  try {
    auto stream = backend.generate_stream(request);
    while (result.review_tokens < l_rev) {
      auto step = stream->next();
      if (!step) break;
      ++result.review_tokens;
      text += step->token_text;
    }
    if (result.review_tokens >= l_rev) {
      // Hard cap: never read past the budget even if the server ignores it.
      stream->cancel();
      while (stream->next()) {
      }
    } else if (stream->finish_reason() == FinishReason::kError) {
      result.failed = true;
      result.note = "backend error: " + stream->error_message();
      return result;
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kScriptedMiss) throw;
    result.failed = true;
    result.note = std::string("backend error: ") + e.what();
    return result;
  }

  if (auto parsed = extract_answer(text)) {
    result.revised_answer = parsed->canonical;
  } else {
    result.failed = true;
    result.note = "no answer in review reply";
  }
  return result;
}

Phase2Result run_phase2(const std::string& problem, const StablePool& pool,
                        const ConsensusPacket& packet, Backend& backend,
                        const SamplingParams& sampling,
                        const RevisionConfig& config,
                        const WeightConfig& weights, uint64_t first_sequence) {
  if (packet.entries.empty()) {
    throw Error(ErrorKind::kNoCandidates, "consensus packet is empty");
  }
  Phase2Result result;

  std::vector<size_t> reviewable;
  for (size_t i = 0; i < pool.entries.size(); ++i) {
    if (pool.entries[i].answer) reviewable.push_back(i);
  }

  result.outcomes.resize(reviewable.size());
  for (size_t j = 0; j < reviewable.size(); ++j) {
    const Trace& t = pool.entries[reviewable[j]];
    RevisionOutcome& o = result.outcomes[j];
    o.trace_id = t.trace_id;
    o.original_answer = t.answer->canonical;
    o.revised_answer = o.original_answer;
    o.weight = trace_weight(t.stability, weights);
  }

  const bool unanimous =
      packet.entries.size() == 1 && packet.entries[0].support_share >= 1.0;
  if (config.skip_unanimous && unanimous) {
    result.skipped_unanimous = true;
  } else {
    parallel_for(reviewable.size(), config.parallel, [&](size_t j) {
      const size_t pool_index = reviewable[j];
      const Trace& t = pool.entries[pool_index];
      RevisionOutcome& o = result.outcomes[j];
      const std::string prompt = build_review_prompt(
          problem, t, o.original_answer, packet, config.trace_tail_budget);
      GenerationRequest req =
          make_request(prompt, sampling, first_sequence + pool_index);
      ReviewResult r = review(backend, std::move(req), config.l_rev,
                              o.original_answer);
      o.revised_answer = r.revised_answer;
      o.review_tokens = r.review_tokens;
      o.review_failed = r.failed;
      o.note = r.note;
      o.flipped = o.revised_answer != o.original_answer;
    });
  }

  std::vector<std::string> answers;
  std::vector<double> w;
  for (const auto& o : result.outcomes) {
    answers.push_back(o.revised_answer);
    w.push_back(o.weight);
    result.review_tokens += o.review_tokens;
  }
  result.final_vote = cwv(answers, w, VoteMethod::kCwvRevised);
  return result;
}

}  // namespace pacer
