#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacer/backend.h"
#include "pacer/consensus.h"
#include "pacer/revision.h"
#include "pacer/screening.h"

namespace pacer {

inline constexpr int kReportVersion = 1;

// Every tunable of a run. Keys in the JSON config file match the field
// names below.
struct PipelineConfig {
  ScreeningConfig screening;            // n_try, n_init, eta
  SamplingParams sampling;              // k, window, max_tokens, temperature, top_p, model, parallel
  size_t top_n = 4;                     // N
  size_t l_sum = 512;                   // L_sum
  RevisionConfig revision;              // l_rev, trace_tail_budget, skip_unanimous
  WeightConfig weights;                 // weight_temperature, raw_weights
  uint64_t seed = 0;

  void validate() const;
};

PipelineConfig config_from_json(const nlohmann::json& j,
                                PipelineConfig base = PipelineConfig{});
nlohmann::json config_to_json(const PipelineConfig& config);

struct TokenLedger {
  uint64_t warmup_tokens = 0;
  uint64_t online_attempt_tokens = 0;
  uint64_t review_tokens = 0;
  uint64_t packet_tokens = 0;  // always 0: rationales are truncated, not generated

  uint64_t total() const {
    return warmup_tokens + online_attempt_tokens + review_tokens + packet_tokens;
  }
};

struct MethodResult {
  std::optional<std::string> answer;
  std::map<std::string, double> tally;
};

enum class RunStatus { kOk, kFallback, kFailed };
const char* to_string(RunStatus status);

struct RunReport {
  std::string problem_id;
  PipelineConfig config;
  RunStatus status = RunStatus::kOk;
  std::string error;
  std::optional<std::string> final_answer;
  MethodResult pacer;
  MethodResult online;  // CWV over the pool's original answers
  MethodResult mv;      // majority vote over the same answers
  TokenLedger ledger;
  double threshold = 0.0;
  size_t pool_size = 0;
  double margin = 0.0;  // pre-revision, under the configured weights
  std::vector<Trace> traces;  // every attempt (text omitted from JSON)
  std::vector<uint64_t> pool_ids;
  std::vector<PacketEntry> packet;
  std::vector<RevisionOutcome> flips;
};

// Phase I, packet construction, Phase II. Module errors are captured in the
// report (status kFailed) so the ledger is always available.
RunReport run_pipeline(const PipelineConfig& config, const std::string& problem,
                       Backend& backend, const std::string& problem_id = "");

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
std::string report_to_text(const RunReport& report);

// problem_id -> canonical answer. Each non-empty line holds an id and an
// answer separated by a comma, tab or spaces; '#' starts a comment line.
std::map<std::string, std::string> read_ground_truth(const std::string& path);

struct ParetoRow {
  std::string method;
  size_t n_try = 0;
  double mean_tokens = 0.0;
  double accuracy = 0.0;
  size_t problems = 0;
};

// One row per (method, n_try). Reports without ground truth are skipped and
// named in `warnings`.
std::vector<ParetoRow> pareto(const std::vector<RunReport>& reports,
                              const std::map<std::string, std::string>& truth,
                              std::vector<std::string>* warnings = nullptr);
std::string pareto_csv(const std::vector<ParetoRow>& rows);

}  // namespace pacer
