#include "pacer/harness.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "pacer/error.h"

namespace pacer {

using nlohmann::json;

const char* to_string(RunStatus status) {
  switch (status) {
    case RunStatus::kOk:
      return "ok";
    case RunStatus::kFallback:
      return "fallback";
    case RunStatus::kFailed:
      return "failed";
  }
  return "failed";
}

namespace {

RunStatus run_status_from_string(const std::string& s) {
  if (s == "ok") return RunStatus::kOk;
  if (s == "fallback") return RunStatus::kFallback;
  return RunStatus::kFailed;
}

TraceOrigin origin_from_string(const std::string& s) {
  return s == "online" ? TraceOrigin::kOnline : TraceOrigin::kWarmup;
}

TraceStatus trace_status_from_string(const std::string& s) {
  if (s == "completed") return TraceStatus::kCompleted;
  if (s == "early_stopped") return TraceStatus::kEarlyStopped;
  return TraceStatus::kFailed;
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json method_to_json(const MethodResult& m) {
  json tally = json::object();
  for (const auto& [a, v] : m.tally) tally[a] = v;
  return json{{"answer", m.answer ? json(*m.answer) : json(nullptr)},
              {"tally", std::move(tally)}};
}

MethodResult method_from_json(const json& j) {
  MethodResult m;
  if (!j.at("answer").is_null()) m.answer = j.at("answer").get<std::string>();
  for (const auto& [a, v] : j.at("tally").items()) m.tally[a] = v.get<double>();
  return m;
}

MethodResult method_from_vote(const VoteResult& v) {
  return MethodResult{v.winner, v.tally};
}

// Highest-stability completed warmup trace that carries an answer.
const Trace* fallback_trace(const std::vector<Trace>& warmup) {
  const Trace* best = nullptr;
  for (const auto& t : warmup) {
    if (t.status != TraceStatus::kCompleted || !t.answer) continue;
    if (best == nullptr || t.stability > best->stability ||
        (t.stability == best->stability && t.trace_id < best->trace_id)) {
      best = &t;
    }
  }
  return best;
}

// Counts steps handed out, so a run that dies in Phase I can still report
// what it spent.
class CountingBackend : public Backend {
 public:
  explicit CountingBackend(Backend& inner) : inner_(inner) {}

  std::unique_ptr<TokenStream> generate_stream(const GenerationRequest& request) override {
    return std::make_unique<Stream>(inner_.generate_stream(request), &steps_);
  }
  uint64_t steps() const { return steps_.load(); }

 private:
  class Stream : public TokenStream {
   public:
    Stream(std::unique_ptr<TokenStream> inner, std::atomic<uint64_t>* steps)
        : inner_(std::move(inner)), steps_(steps) {}
    std::optional<TokenStep> next() override {
      auto step = inner_->next();
      if (step) steps_->fetch_add(1);
      return step;
    }
    void cancel() override { inner_->cancel(); }
    FinishReason finish_reason() const override { return inner_->finish_reason(); }
    std::string error_message() const override { return inner_->error_message(); }

   private:
    std::unique_ptr<TokenStream> inner_;
    std::atomic<uint64_t>* steps_;
  };

  Backend& inner_;
  std::atomic<uint64_t> steps_{0};
};

}  // namespace

void PipelineConfig::validate() const {
  screening.validate();
  if (sampling.k == 0) throw Error(ErrorKind::kConfig, "k must be >= 1");
  if (sampling.window == 0) throw Error(ErrorKind::kConfig, "window must be >= 1");
  if (sampling.max_tokens == 0) throw Error(ErrorKind::kConfig, "max_tokens must be >= 1");
  if (sampling.parallel == 0) throw Error(ErrorKind::kConfig, "parallel must be >= 1");
  if (top_n == 0) throw Error(ErrorKind::kConfig, "top_n must be >= 1");
  if (l_sum == 0) throw Error(ErrorKind::kConfig, "l_sum must be >= 1");
  if (revision.l_rev == 0) throw Error(ErrorKind::kConfig, "l_rev must be >= 1");
  if (revision.trace_tail_budget == 0) {
    throw Error(ErrorKind::kConfig, "trace_tail_budget must be >= 1");
  }
  if (!(weights.temperature > 0.0)) {
    throw Error(ErrorKind::kConfig, "weight_temperature must be > 0");
  }
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  static const std::set<std::string> known{
      "n_try", "n_init", "eta", "k", "window", "max_tokens", "temperature",
      "top_p", "model", "parallel", "top_n", "l_sum", "l_rev",
      "trace_tail_budget", "skip_unanimous", "weight_temperature",
      "raw_weights", "seed"};
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
  }
  try {
    read_key(j, "n_try", c.screening.n_try);
    read_key(j, "n_init", c.screening.n_init);
    read_key(j, "eta", c.screening.eta);
    read_key(j, "k", c.sampling.k);
    read_key(j, "window", c.sampling.window);
    read_key(j, "max_tokens", c.sampling.max_tokens);
    read_key(j, "temperature", c.sampling.temperature);
    read_key(j, "top_p", c.sampling.top_p);
    read_key(j, "model", c.sampling.model_name);
    read_key(j, "parallel", c.sampling.parallel);
    c.revision.parallel = c.sampling.parallel;
    read_key(j, "top_n", c.top_n);
    read_key(j, "l_sum", c.l_sum);
    read_key(j, "l_rev", c.revision.l_rev);
    read_key(j, "trace_tail_budget", c.revision.trace_tail_budget);
    read_key(j, "skip_unanimous", c.revision.skip_unanimous);
    read_key(j, "weight_temperature", c.weights.temperature);
    if (j.contains("raw_weights")) {
      c.weights.mode = j.at("raw_weights").get<bool>() ? WeightMode::kRaw : WeightMode::kExp;
    }
    read_key(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
  return c;
}

json config_to_json(const PipelineConfig& c) {
  return json{{"n_try", c.screening.n_try},
              {"n_init", c.screening.n_init},
              {"eta", c.screening.eta},
              {"k", c.sampling.k},
              {"window", c.sampling.window},
              {"max_tokens", c.sampling.max_tokens},
              {"temperature", c.sampling.temperature},
              {"top_p", c.sampling.top_p},
              {"model", c.sampling.model_name},
              {"parallel", c.sampling.parallel},
              {"top_n", c.top_n},
              {"l_sum", c.l_sum},
              {"l_rev", c.revision.l_rev},
              {"trace_tail_budget", c.revision.trace_tail_budget},
              {"skip_unanimous", c.revision.skip_unanimous},
              {"weight_temperature", c.weights.temperature},
              {"raw_weights", c.weights.mode == WeightMode::kRaw},
              {"seed", c.seed}};
}

RunReport run_pipeline(const PipelineConfig& config, const std::string& problem,
                       Backend& backend, const std::string& problem_id) {
  RunReport report;
  report.problem_id = problem_id;
  report.config = config;

  Phase1Result phase1;
  CountingBackend counted(backend);
  try {
    config.validate();
    phase1 = run_phase1(config.screening, config.sampling, counted, problem);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kScriptedMiss) throw;
    report.status = RunStatus::kFailed;
    report.error = e.what();
    // Phase I fails either when no warmup attempt survives or when the
    // backend lacks logprobs, which surfaces on the first warmup chunk.
    // Either way the steps spent are warmup steps.
    report.ledger.warmup_tokens = counted.steps();
    return report;
  }

  report.ledger.warmup_tokens = phase1.warmup_tokens;
  report.ledger.online_attempt_tokens = phase1.online_tokens;
  report.threshold = phase1.threshold.s;
  report.pool_size = phase1.pool.size();
  report.traces = phase1.warmup;
  report.traces.insert(report.traces.end(), phase1.online.begin(), phase1.online.end());
  for (const auto& t : phase1.pool.entries) report.pool_ids.push_back(t.trace_id);

  const StablePool& pool = phase1.pool;
  const bool has_candidate = std::any_of(pool.entries.begin(), pool.entries.end(),
                                         [](const Trace& t) { return t.answer.has_value(); });
  if (!has_candidate) {
    const Trace* fb = fallback_trace(phase1.warmup);
    if (fb == nullptr) {
      report.status = RunStatus::kFailed;
      report.error = "no completed trace produced an extractable answer";
      return report;
    }
    report.status = RunStatus::kFallback;
    report.final_answer = fb->answer->canonical;
    return report;
  }

  try {
    const SupportMap support_map = support(pool, config.weights);
    report.margin = consensus_margin(support_map);

    std::vector<std::string> answers;
    std::vector<double> weights;
    for (const auto& t : pool.entries) {
      if (!t.answer) continue;
      answers.push_back(t.answer->canonical);
      weights.push_back(trace_weight(t.stability, config.weights));
    }
    report.online = method_from_vote(cwv(answers, weights, VoteMethod::kCwvOriginal));
    report.mv = method_from_vote(mv(answers));

    const ConsensusPacket packet =
        build_packet(pool, config.top_n, config.l_sum, config.weights);
    report.packet = packet.entries;

    RevisionConfig rev = config.revision;
    rev.parallel = config.sampling.parallel;
    Phase2Result phase2 = run_phase2(problem, pool, packet, backend, config.sampling,
                                     rev, config.weights, config.screening.n_try);
    report.ledger.review_tokens = phase2.review_tokens;
    report.flips = std::move(phase2.outcomes);
    report.pacer = method_from_vote(phase2.final_vote);
    report.final_answer = phase2.final_vote.winner;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kScriptedMiss) throw;
    report.status = RunStatus::kFailed;
    report.error = e.what();
  }
  return report;
}

json report_to_json(const RunReport& r) {
  json traces = json::array();
  const std::set<uint64_t> in_pool(r.pool_ids.begin(), r.pool_ids.end());
  for (const auto& t : r.traces) {
    json jt{{"trace_id", t.trace_id},
            {"origin", to_string(t.origin)},
            {"status", to_string(t.status)},
            {"stability", t.stability},
            {"answer", t.answer ? json(t.answer->canonical) : json(nullptr)},
            {"generated_tokens", t.generated_tokens},
            {"finish_reason", to_string(t.finish_reason)},
            {"in_pool", in_pool.count(t.trace_id) > 0}};
    if (!t.error.empty()) jt["error"] = t.error;
    traces.push_back(std::move(jt));
  }
  json packet = json::array();
  for (const auto& e : r.packet) {
    packet.push_back(json{{"answer", e.answer},
                          {"weighted_support", e.weighted_support},
                          {"support_share", e.support_share},
                          {"count", e.count},
                          {"representative_trace_id", e.representative_trace_id}});
  }
  json flips = json::array();
  for (const auto& o : r.flips) {
    json jo{{"trace_id", o.trace_id},
            {"original_answer", o.original_answer},
            {"revised_answer", o.revised_answer},
            {"flipped", o.flipped},
            {"review_tokens", o.review_tokens},
            {"weight", o.weight},
            {"review_failed", o.review_failed}};
    if (!o.note.empty()) jo["note"] = o.note;
    flips.push_back(std::move(jo));
  }
  json out{{"report_version", kReportVersion},
           {"problem_id", r.problem_id},
           {"status", to_string(r.status)},
           {"final_answer", r.final_answer ? json(*r.final_answer) : json(nullptr)},
           {"methods",
            json{{"pacer", method_to_json(r.pacer)},
                 {"online", method_to_json(r.online)},
                 {"mv", method_to_json(r.mv)}}},
           {"ledger",
            json{{"warmup_tokens", r.ledger.warmup_tokens},
                 {"online_attempt_tokens", r.ledger.online_attempt_tokens},
                 {"review_tokens", r.ledger.review_tokens},
                 {"packet_tokens", r.ledger.packet_tokens},
                 {"total", r.ledger.total()}}},
           {"threshold", r.threshold},
           {"pool_size", r.pool_size},
           {"margin", r.margin},
           {"config", config_to_json(r.config)},
           {"packet", std::move(packet)},
           {"flips", std::move(flips)},
           {"traces", std::move(traces)}};
  if (!r.error.empty()) out["error"] = r.error;
  return out;
}

RunReport report_from_json(const json& j) {
  if (j.value("report_version", 0) != kReportVersion) {
    throw Error(ErrorKind::kConfig, "unsupported report_version");
  }
  RunReport r;
  try {
    r.problem_id = j.at("problem_id").get<std::string>();
    r.status = run_status_from_string(j.at("status").get<std::string>());
    if (!j.at("final_answer").is_null()) r.final_answer = j.at("final_answer").get<std::string>();
    r.pacer = method_from_json(j.at("methods").at("pacer"));
    r.online = method_from_json(j.at("methods").at("online"));
    r.mv = method_from_json(j.at("methods").at("mv"));
    const json& l = j.at("ledger");
    r.ledger.warmup_tokens = l.at("warmup_tokens").get<uint64_t>();
    r.ledger.online_attempt_tokens = l.at("online_attempt_tokens").get<uint64_t>();
    r.ledger.review_tokens = l.at("review_tokens").get<uint64_t>();
    r.ledger.packet_tokens = l.at("packet_tokens").get<uint64_t>();
    r.threshold = j.at("threshold").get<double>();
    r.pool_size = j.at("pool_size").get<size_t>();
    r.margin = j.at("margin").get<double>();
    r.config = config_from_json(j.at("config"));
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    for (const auto& e : j.at("packet")) {
      PacketEntry p;
      p.answer = e.at("answer").get<std::string>();
      p.weighted_support = e.at("weighted_support").get<double>();
      p.support_share = e.at("support_share").get<double>();
      p.count = e.at("count").get<uint64_t>();
      p.representative_trace_id = e.at("representative_trace_id").get<uint64_t>();
      r.packet.push_back(std::move(p));
    }
    for (const auto& f : j.at("flips")) {
      RevisionOutcome o;
      o.trace_id = f.at("trace_id").get<uint64_t>();
      o.original_answer = f.at("original_answer").get<std::string>();
      o.revised_answer = f.at("revised_answer").get<std::string>();
      o.flipped = f.at("flipped").get<bool>();
      o.review_tokens = f.at("review_tokens").get<uint64_t>();
      o.weight = f.at("weight").get<double>();
      o.review_failed = f.at("review_failed").get<bool>();
      if (f.contains("note")) o.note = f.at("note").get<std::string>();
      r.flips.push_back(std::move(o));
    }
    for (const auto& jt : j.at("traces")) {
      Trace t;
      t.trace_id = jt.at("trace_id").get<uint64_t>();
      t.origin = origin_from_string(jt.at("origin").get<std::string>());
      t.status = trace_status_from_string(jt.at("status").get<std::string>());
      t.stability = jt.at("stability").get<double>();
      if (!jt.at("answer").is_null()) {
        t.answer = canonicalize(jt.at("answer").get<std::string>());
      }
      t.generated_tokens = jt.at("generated_tokens").get<uint64_t>();
      t.finish_reason = finish_reason_from_string(jt.at("finish_reason").get<std::string>());
      if (jt.contains("error")) t.error = jt.at("error").get<std::string>();
      if (jt.at("in_pool").get<bool>()) r.pool_ids.push_back(t.trace_id);
      r.traces.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string report_to_text(const RunReport& r) {
  std::ostringstream out;
  auto answer_or_dash = [](const std::optional<std::string>& a) {
    return a ? *a : std::string("-");
  };
  if (!r.problem_id.empty()) out << "problem:        " << r.problem_id << "\n";
  out << "status:         " << to_string(r.status) << "\n";
  if (!r.error.empty()) out << "error:          " << r.error << "\n";
  out << "final answer:   " << answer_or_dash(r.final_answer) << "\n";
  out << "pacer:          " << answer_or_dash(r.pacer.answer) << "\n";
  out << "online:         " << answer_or_dash(r.online.answer) << "\n";
  out << "mv:             " << answer_or_dash(r.mv.answer) << "\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.6f", r.threshold);
  out << "threshold s:    " << buf << "\n";
  out << "pool size B:    " << r.pool_size << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", r.margin);
  out << "margin:         " << buf << "\n";
  size_t flipped = 0;
  for (const auto& o : r.flips) flipped += o.flipped;
  out << "flips:          " << flipped << " of " << r.flips.size() << " reviews\n";
  out << "tokens:         warmup=" << r.ledger.warmup_tokens
      << " online=" << r.ledger.online_attempt_tokens
      << " review=" << r.ledger.review_tokens
      << " packet=" << r.ledger.packet_tokens << " total=" << r.ledger.total() << "\n";
  if (!r.packet.empty()) {
    out << "packet:\n";
    for (const auto& e : r.packet) {
      out << "  " << e.answer << "  support=" << share_percent(e.support_share)
          << "%  count=" << e.count << "\n";
    }
  }
  return out.str();
}

std::map<std::string, std::string> read_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open ground truth file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    size_t sep = line.find_first_of(",\t", first);
    if (sep == std::string::npos) sep = line.find(' ', first);
    if (sep == std::string::npos) {
      throw Error(ErrorKind::kConfig,
                  path + ":" + std::to_string(line_no) + ": expected '<id> <answer>'");
    }
    std::string id = line.substr(first, sep - first);
    while (!id.empty() && (id.back() == ' ' || id.back() == '\t')) id.pop_back();
    out[id] = canonicalize(line.substr(sep + 1)).canonical;
  }
  return out;
}

std::vector<ParetoRow> pareto(const std::vector<RunReport>& reports,
                              const std::map<std::string, std::string>& truth,
                              std::vector<std::string>* warnings) {
  struct Acc {
    size_t problems = 0;
    size_t correct = 0;
    double tokens = 0.0;
  };
  // Keyed by (method rank, n_try) for a stable row order.
  static const char* kMethods[] = {"pacer", "online", "mv"};
  std::map<std::pair<int, size_t>, Acc> acc;
  for (const auto& r : reports) {
    auto gt = truth.find(r.problem_id);
    if (gt == truth.end()) {
      if (warnings) warnings->push_back("no ground truth for problem '" + r.problem_id + "'");
      continue;
    }
    const size_t n_try = r.config.screening.n_try;
    const double base_tokens =
        static_cast<double>(r.ledger.warmup_tokens + r.ledger.online_attempt_tokens);
    const MethodResult* methods[] = {&r.pacer, &r.online, &r.mv};
    for (int m = 0; m < 3; ++m) {
      Acc& a = acc[{m, n_try}];
      ++a.problems;
      std::optional<std::string> answer = methods[m]->answer;
      if (r.status == RunStatus::kFallback) answer = r.final_answer;
      a.correct += answer && *answer == gt->second;
      a.tokens += m == 0 ? static_cast<double>(r.ledger.total()) : base_tokens;
    }
  }
  std::vector<ParetoRow> rows;
  for (const auto& [key, a] : acc) {
    ParetoRow row;
    row.method = kMethods[key.first];
    row.n_try = key.second;
    row.problems = a.problems;
    row.accuracy = static_cast<double>(a.correct) / static_cast<double>(a.problems);
    row.mean_tokens = a.tokens / static_cast<double>(a.problems);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string pareto_csv(const std::vector<ParetoRow>& rows) {
  std::ostringstream out;
  out << "method,n_try,mean_tokens,accuracy,problems\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.2f,%.6f,%zu\n", r.method.c_str(), r.n_try,
                  r.mean_tokens, r.accuracy, r.problems);
    out << buf;
  }
  return out.str();
}

}  // namespace pacer
