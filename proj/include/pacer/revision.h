#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pacer/backend.h"
#include "pacer/consensus.h"
#include "pacer/extraction.h"
#include "pacer/screening.h"

namespace pacer {

enum class VoteMethod { kCwvRevised, kCwvOriginal, kMv };
const char* to_string(VoteMethod method);

struct VoteResult {
  std::string winner;                    // canonical answer
  std::map<std::string, double> tally;   // weighted sum per answer
  std::map<std::string, uint64_t> counts;
  VoteMethod method = VoteMethod::kCwvRevised;
};

// Tally core over dense labels 0..num_labels-1. Winner maximizes the
// weighted sum; ties go to the larger count, then the smaller label.
// Returns -1 for empty input.
int weighted_vote_labels(std::span<const int> labels,
                         std::span<const double> weights, int num_labels,
                         std::vector<double>* tally = nullptr,
                         std::vector<uint64_t>* counts = nullptr);

// Confidence-weighted vote. Labels are ranked lexicographically so the tie
// rule prefers the smaller answer string. Throws kNoCandidates on empty
// input and kInvariantViolation when the lists differ in length.
VoteResult cwv(std::span<const std::string> answers,
               std::span<const double> weights,
               VoteMethod method = VoteMethod::kCwvRevised);

// Unweighted majority vote with the same tie rule.
VoteResult mv(std::span<const std::string> answers);

struct RevisionOutcome {
  uint64_t trace_id = 0;
  std::string original_answer;
  std::string revised_answer;
  bool flipped = false;
  uint64_t review_tokens = 0;
  double weight = 0.0;  // original trace's vote weight
  bool review_failed = false;
  std::string note;
};

struct RevisionConfig {
  size_t l_rev = 1024;
  size_t trace_tail_budget = 1024;
  bool skip_unanimous = false;
  size_t parallel = 8;
};

inline constexpr std::string_view kReviewInstruction =
    "If the peer evidence reveals a flaw in your reasoning, revise; otherwise "
    "keep your answer. End your reply with \\boxed{final answer}.";

// Problem, own solution tail, current answer, rendered packet, instruction.
std::string build_review_prompt(const std::string& problem, const Trace& trace,
                                const std::string& answer,
                                const ConsensusPacket& packet,
                                size_t trace_tail_budget,
                                const TokenCounter& counter = default_token_counter());

struct ReviewResult {
  std::string revised_answer;  // canonical
  uint64_t review_tokens = 0;
  bool failed = false;         // backend error or no parsable answer
  std::string note;
};

// One review completion capped at l_rev tokens. Keeps `original_answer`
// when the reply has no extractable answer or the backend fails.
ReviewResult review(Backend& backend, GenerationRequest request, size_t l_rev,
                    const std::string& original_answer);

struct Phase2Result {
  VoteResult final_vote;
  std::vector<RevisionOutcome> outcomes;  // pool order
  uint64_t review_tokens = 0;
  bool skipped_unanimous = false;
};

// Reviews every answered pool trace and votes over the revised answers with
// the original traces' weights. Review requests take sequence numbers
// first_sequence + pool index.
Phase2Result run_phase2(const std::string& problem, const StablePool& pool,
                        const ConsensusPacket& packet, Backend& backend,
                        const SamplingParams& sampling,
                        const RevisionConfig& config,
                        const WeightConfig& weights, uint64_t first_sequence);

}  // namespace pacer
