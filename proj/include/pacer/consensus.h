#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pacer/extraction.h"
#include "pacer/screening.h"

namespace pacer {

// How a trace's stability becomes its vote weight.
//   kExp: exp(S / T), strictly positive, so each supporter adds support.
//   kRaw: S itself (<= 0), the literal weighted-sum rule.
enum class WeightMode { kExp, kRaw };

struct WeightConfig {
  WeightMode mode = WeightMode::kExp;
  double temperature = 1.0;
};

double vote_weight(double stability, double temperature);
double trace_weight(double stability, const WeightConfig& config);

struct CandidateSupport {
  CanonicalAnswer answer;
  double weighted_support = 0.0;
  uint64_t count = 0;
  uint64_t representative_trace_id = 0;
};

using SupportMap = std::map<std::string, CandidateSupport>;  // by canonical

// V(a) over traces with an answer. Throws kNoCandidates if none has one.
SupportMap support(const StablePool& pool, const WeightConfig& weights);

// Largest V first; ties go to the larger count, then the lexicographically
// smaller canonical answer.
std::vector<CandidateSupport> top_n(const SupportMap& support_map, size_t n);

// Highest-stability supporter of `canonical`; ties go to the smaller
// trace_id. Throws kInvariantViolation when nobody supports it.
const Trace& representative(const StablePool& pool, const std::string& canonical);

// Token budget accounting used for rationale truncation. The default counts
// whitespace-delimited words and additionally caps a kept span at
// kCharsPerToken characters per token of budget, so a few huge "words"
// cannot blow the budget.
class TokenCounter {
 public:
  virtual ~TokenCounter() = default;
  virtual size_t count(std::string_view text) const = 0;
  virtual bool fits(std::string_view text, size_t budget) const {
    return count(text) <= budget;
  }
  // Longest suffix of `text` that fits in `budget` tokens.
  virtual std::string_view tail(std::string_view text, size_t budget) const = 0;
};

class WhitespaceTokenCounter : public TokenCounter {
 public:
  static constexpr size_t kCharsPerToken = 8;

  size_t count(std::string_view text) const override;
  bool fits(std::string_view text, size_t budget) const override;
  std::string_view tail(std::string_view text, size_t budget) const override;
};

const TokenCounter& default_token_counter();

inline constexpr std::string_view kTruncationMarker = "[...] ";

// Verbatim if the text fits in l_sum tokens; otherwise the marker followed
// by the last l_sum tokens.
std::string truncate_rationale(std::string_view text, size_t l_sum,
                               const TokenCounter& counter = default_token_counter());

struct PacketEntry {
  std::string answer;  // canonical
  double weighted_support = 0.0;
  double support_share = 0.0;
  uint64_t count = 0;
  uint64_t representative_trace_id = 0;
  std::string rationale;
};

struct ConsensusPacket {
  std::vector<PacketEntry> entries;  // descending support
  size_t n_top = 4;
  size_t sum_budget = 512;
};

ConsensusPacket build_packet(const StablePool& pool, size_t n, size_t l_sum,
                             const WeightConfig& weights,
                             const TokenCounter& counter = default_token_counter());

// Whole percent, ties to even (0.125 -> 12).
long share_percent(double share);

// One line per entry, newline-separated, no trailing newline:
//   Candidate {i}: answer={a}; support={pct}%; representative reasoning: {r}
// Line breaks inside a rationale are rendered as spaces.
std::string render_packet(const ConsensusPacket& packet);

// V(a1) - max_{a != a1} V(a) over the support map; V(a1) alone when there
// is a single candidate, 0 for an empty map.
double consensus_margin(const SupportMap& support_map);

}  // namespace pacer
