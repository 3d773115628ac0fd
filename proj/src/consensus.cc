#include "pacer/consensus.h"

#include <algorithm>
#include <cfenv>
#include <cmath>

#include "pacer/error.h"

namespace pacer {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool ranks_before(const CandidateSupport& a, const CandidateSupport& b) {
  if (a.weighted_support != b.weighted_support) {
    return a.weighted_support > b.weighted_support;
  }
  if (a.count != b.count) return a.count > b.count;
  return a.answer.canonical < b.answer.canonical;
}

}  // namespace

double vote_weight(double stability, double temperature) {
  return std::exp(stability / temperature);
}

double trace_weight(double stability, const WeightConfig& config) {
  return config.mode == WeightMode::kRaw ? stability
                                         : vote_weight(stability, config.temperature);
}

SupportMap support(const StablePool& pool, const WeightConfig& weights) {
  SupportMap out;
  for (const auto& trace : pool.entries) {
    if (!trace.answer) continue;
    const std::string& key = trace.answer->canonical;
    auto [it, inserted] = out.try_emplace(key);
    CandidateSupport& c = it->second;
    if (inserted) {
      c.answer = *trace.answer;
      c.representative_trace_id = trace.trace_id;
    }
    c.weighted_support += trace_weight(trace.stability, weights);
    ++c.count;
  }
  if (out.empty()) {
    throw Error(ErrorKind::kNoCandidates, "no pool trace has an extractable answer");
  }
  for (auto& [key, c] : out) {
    c.representative_trace_id = representative(pool, key).trace_id;
  }
  return out;
}

std::vector<CandidateSupport> top_n(const SupportMap& support_map, size_t n) {
  std::vector<CandidateSupport> all;
  all.reserve(support_map.size());
  for (const auto& [key, c] : support_map) all.push_back(c);
  std::sort(all.begin(), all.end(), ranks_before);
  if (all.size() > n) all.resize(n);
  return all;
}

const Trace& representative(const StablePool& pool, const std::string& canonical) {
  const Trace* best = nullptr;
  for (const auto& trace : pool.entries) {
    if (!trace.answer || trace.answer->canonical != canonical) continue;
    if (best == nullptr || trace.stability > best->stability ||
        (trace.stability == best->stability && trace.trace_id < best->trace_id)) {
      best = &trace;
    }
  }
  if (best == nullptr) {
    throw Error(ErrorKind::kInvariantViolation,
                "no pool trace supports answer '" + canonical + "'");
  }
  return *best;
}

size_t WhitespaceTokenCounter::count(std::string_view text) const {
  size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

bool WhitespaceTokenCounter::fits(std::string_view text, size_t budget) const {
  return text.size() <= kCharsPerToken * budget && count(text) <= budget;
}

std::string_view WhitespaceTokenCounter::tail(std::string_view text,
                                              size_t budget) const {
  if (budget == 0) return {};
  // Walk backwards to the start of the budget-th word from the end.
  size_t words = 0;
  size_t start = text.size();
  size_t i = text.size();
  while (i > 0) {
    while (i > 0 && is_space(text[i - 1])) --i;
    if (i == 0) break;
    size_t word_begin = i;
    while (word_begin > 0 && !is_space(text[word_begin - 1])) --word_begin;
    ++words;
    start = word_begin;
    i = word_begin;
    if (words == budget) break;
  }
  std::string_view kept = text.substr(start);
  const size_t char_cap = kCharsPerToken * budget;
  if (kept.size() > char_cap) {
    const size_t cut = kept.size() - char_cap;
    // Snap forward to the next word start unless that would drop everything.
    size_t next = cut;
    if (!is_space(kept[cut - 1])) {
      while (next < kept.size() && !is_space(kept[next])) ++next;
    }
    while (next < kept.size() && is_space(kept[next])) ++next;
    kept.remove_prefix(next < kept.size() ? next : cut);
  }
  return kept;
}

const TokenCounter& default_token_counter() {
  static const WhitespaceTokenCounter counter;
  return counter;
}

std::string truncate_rationale(std::string_view text, size_t l_sum,
                               const TokenCounter& counter) {
  if (text.empty()) return {};
  if (counter.fits(text, l_sum)) return std::string(text);
  std::string out(kTruncationMarker);
  out.append(counter.tail(text, l_sum));
  return out;
}

ConsensusPacket build_packet(const StablePool& pool, size_t n, size_t l_sum,
                             const WeightConfig& weights,
                             const TokenCounter& counter) {
  if (n == 0) throw Error(ErrorKind::kConfig, "top-N must be >= 1");
  if (l_sum == 0) throw Error(ErrorKind::kConfig, "L_sum must be >= 1");

  const SupportMap map = support(pool, weights);
  double total = 0.0;
  uint64_t answered = 0;
  for (const auto& [key, c] : map) {
    total += c.weighted_support;
    answered += c.count;
  }

  ConsensusPacket packet;
  packet.n_top = n;
  packet.sum_budget = l_sum;
  for (const auto& c : top_n(map, n)) {
    PacketEntry e;
    e.answer = c.answer.canonical;
    e.weighted_support = c.weighted_support;
    e.count = c.count;
    e.support_share = total != 0.0
                          ? c.weighted_support / total
                          : static_cast<double>(c.count) / static_cast<double>(answered);
    e.representative_trace_id = c.representative_trace_id;
    e.rationale = truncate_rationale(representative(pool, e.answer).text, l_sum, counter);
    packet.entries.push_back(std::move(e));
  }
  return packet;
}

long share_percent(double share) {
  const int old = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const long pct = std::lrint(share * 100.0);
  std::fesetround(old);
  return pct;
}

std::string render_packet(const ConsensusPacket& packet) {
  std::string out;
  for (size_t i = 0; i < packet.entries.size(); ++i) {
    const PacketEntry& e = packet.entries[i];
    std::string rationale = e.rationale;
    for (char& c : rationale) {
      if (c == '\n' || c == '\r') c = ' ';
    }
    if (i > 0) out += '\n';
    out += "Candidate " + std::to_string(i + 1) + ": answer=" + e.answer +
           "; support=" + std::to_string(share_percent(e.support_share)) +
           "%; representative reasoning: " + rationale;
  }
  return out;
}

double consensus_margin(const SupportMap& support_map) {
  const auto ranked = top_n(support_map, 2);
  if (ranked.empty()) return 0.0;
  if (ranked.size() == 1) return ranked[0].weighted_support;
  return ranked[0].weighted_support - ranked[1].weighted_support;
}

}  // namespace pacer
