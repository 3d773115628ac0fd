#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "pacer/error.h"
#include "pacer/harness.h"
#include "pacer/record_store.h"
#include "pacer/script_file.h"

namespace pacer {
namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig sample_config(const std::string& name) {
  return config_from_json(json::parse(slurp(std::string(PACER_SAMPLES) + "/" + name)));
}

std::shared_ptr<ScriptedBackend> sample_script(const std::string& name) {
  return load_script_file(std::string(PACER_SAMPLES) + "/" + name);
}

// Counts every step any stream hands out.
class CountingBackend : public Backend {
 public:
  explicit CountingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  std::unique_ptr<TokenStream> generate_stream(const GenerationRequest& r) override {
    return std::make_unique<Stream>(inner_->generate_stream(r), &yielded);
  }
  std::atomic<uint64_t> yielded{0};

 private:
  class Stream : public TokenStream {
   public:
    Stream(std::unique_ptr<TokenStream> s, std::atomic<uint64_t>* n) : s_(std::move(s)), n_(n) {}
    std::optional<TokenStep> next() override {
      auto step = s_->next();
      if (step) ++*n_;
      return step;
    }
    void cancel() override { s_->cancel(); }
    FinishReason finish_reason() const override { return s_->finish_reason(); }

   private:
    std::unique_ptr<TokenStream> s_;
    std::atomic<uint64_t>* n_;
  };
  std::shared_ptr<Backend> inner_;
};

TEST(Config, Defaults) {
  const PipelineConfig c;
  EXPECT_EQ(c.screening.n_try, 256u);
  EXPECT_EQ(c.screening.n_init, 64u);
  EXPECT_EQ(c.screening.eta, 10.0);
  EXPECT_EQ(c.top_n, 4u);
  EXPECT_EQ(c.l_sum, 512u);
  EXPECT_EQ(c.revision.l_rev, 1024u);
  EXPECT_EQ(c.sampling.k, 5u);
  EXPECT_EQ(c.sampling.window, 1024u);
  EXPECT_EQ(c.sampling.parallel, 8u);
  EXPECT_EQ(c.weights.temperature, 1.0);
  EXPECT_EQ(c.weights.mode, WeightMode::kExp);
}

TEST(Config, JsonRoundTripAndOverrides) {
  const json j{{"n_try", 32},        {"n_init", 8},   {"eta", 25},       {"top_n", 2},
               {"l_sum", 100},       {"l_rev", 200},  {"raw_weights", true},
               {"weight_temperature", 0.5}, {"parallel", 3}, {"seed", 9}, {"model", "m"}};
  const PipelineConfig c = config_from_json(j);
  EXPECT_EQ(c.screening.n_try, 32u);
  EXPECT_EQ(c.screening.eta, 25.0);
  EXPECT_EQ(c.weights.mode, WeightMode::kRaw);
  EXPECT_EQ(c.revision.parallel, 3u);
  EXPECT_EQ(c.sampling.model_name, "m");
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(json{{"n_tries", 3}}), Error);
  EXPECT_THROW(config_from_json(json{{"n_try", "many"}}), Error);
  EXPECT_THROW(config_from_json(json::array()), Error);
  PipelineConfig c;
  c.weights.temperature = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(RunPipeline, LedgerScenario) {
  auto backend = sample_script("ledger_script.json");
  CountingBackend counting(backend);
  const RunReport r = run_pipeline(sample_config("ledger_config.json"), "P", counting);
  EXPECT_EQ(r.status, RunStatus::kOk);
  EXPECT_EQ(r.ledger.warmup_tokens, 200u);
  EXPECT_EQ(r.ledger.online_attempt_tokens, 110u);
  EXPECT_EQ(r.ledger.review_tokens, 40u);
  EXPECT_EQ(r.ledger.packet_tokens, 0u);
  EXPECT_EQ(r.ledger.total(), 350u);
  EXPECT_EQ(counting.yielded.load(), r.ledger.total());
  EXPECT_EQ(r.pool_size, 2u);
  EXPECT_EQ(r.pool_ids, (std::vector<uint64_t>{1, 3}));
  EXPECT_EQ(r.threshold, -0.125);
}

TEST(RunPipeline, FlipScenario) {
  const RunReport r =
      run_pipeline(sample_config("flip_config.json"), "P", *sample_script("flip_script.json"));
  ASSERT_EQ(r.status, RunStatus::kOk) << r.error;
  EXPECT_EQ(r.online.answer, "7");
  EXPECT_EQ(r.mv.answer, "7");
  EXPECT_EQ(r.pacer.answer, "12");
  EXPECT_EQ(r.final_answer, "12");
  EXPECT_EQ(r.online.tally, (std::map<std::string, double>{{"12", 2}, {"5", 1}, {"7", 3}}));
  EXPECT_EQ(r.pacer.tally, (std::map<std::string, double>{{"12", 4}, {"5", 1}, {"7", 1}}));
  EXPECT_EQ(r.margin, 1.0);
  size_t flips = 0;
  for (const auto& o : r.flips) flips += o.flipped;
  EXPECT_EQ(flips, 2u);
}

TEST(RunPipeline, FallbackWhenPoolHasNoAnswers) {
  // Two warmup traces; only the more stable one passes, and it has no answer.
  auto b = scripted_backend_from_json(json::parse(R"({"scripts": [
    {"sequence": 0, "filler": {"count": 5, "token": "x ", "logprob": -0.5},
     "steps": [{"token": "\\boxed{41}", "logprob": -0.5}]},
    {"sequence": 1, "filler": {"count": 5, "token": "no answer ", "logprob": -0.25}}]})"));
  PipelineConfig c;
  c.screening = ScreeningConfig{2, 2, 10};
  const RunReport r = run_pipeline(c, "P", *b);
  EXPECT_EQ(r.status, RunStatus::kFallback);
  EXPECT_EQ(r.final_answer, "41");
  EXPECT_EQ(r.ledger.total(), 11u);
  EXPECT_EQ(r.ledger.review_tokens, 0u);
}

TEST(RunPipeline, FailedRunStillReportsLedger) {
  auto b = scripted_backend_from_json(json::parse(R"({"scripts": [
    {"sequence": 0, "filler": {"count": 4, "token": "x ", "logprob": -0.5}, "fail_after": 3}]})"));
  PipelineConfig c;
  c.screening = ScreeningConfig{1, 1, 10};
  const RunReport r = run_pipeline(c, "P", *b);
  EXPECT_EQ(r.status, RunStatus::kFailed);
  EXPECT_FALSE(r.error.empty());
  EXPECT_FALSE(r.final_answer.has_value());
  EXPECT_EQ(r.ledger.warmup_tokens, 3u);
}

TEST(RunPipeline, InvalidConfigIsFailedReport) {
  ScriptedBackend b;
  PipelineConfig c;
  c.screening.n_init = 0;
  EXPECT_EQ(run_pipeline(c, "P", b).status, RunStatus::kFailed);
}

TEST(Report, JsonRoundTripAndSelfConsistency) {
  const RunReport r =
      run_pipeline(sample_config("flip_config.json"), "P", *sample_script("flip_script.json"), "id1");
  const json j = report_to_json(r);
  EXPECT_EQ(j.at("report_version"), 1);
  EXPECT_EQ(j.at("ledger").at("packet_tokens"), 0);
  const RunReport back = report_from_json(j);
  EXPECT_EQ(report_to_json(back).dump(), j.dump());

  // Recompute the online tally from per-trace data in the JSON.
  std::map<std::string, double> tally;
  for (const auto& t : j.at("traces")) {
    if (!t.at("in_pool").get<bool>() || t.at("answer").is_null()) continue;
    tally[t.at("answer").get<std::string>()] += std::exp(t.at("stability").get<double>());
  }
  EXPECT_EQ(tally, back.online.tally);
}

TEST(Report, TextMentionsKeyFields) {
  const RunReport r =
      run_pipeline(sample_config("ledger_config.json"), "P", *sample_script("ledger_script.json"));
  const std::string text = report_to_text(r);
  EXPECT_NE(text.find("total=350"), std::string::npos);
  EXPECT_NE(text.find("final answer:   12"), std::string::npos);
}

TEST(Replay, IdenticalBytesAcrossRuns) {
  const PipelineConfig c = sample_config("flip_config.json");
  RecordingBackend rec(sample_script("flip_script.json"));
  const RunReport live = run_pipeline(c, "P", rec);
  const std::string path = (std::filesystem::temp_directory_path() /
                            ("pacer_replay_" + std::to_string(::getpid()) + ".jsonl")).string();
  write_store(path, rec.records(), {{"problem", "P"}, {"config", config_to_json(c)}});
  std::string first, second;
  for (std::string* out : {&first, &second}) {
    ReplayBackend replay(read_store(path));
    *out = report_to_json(run_pipeline(c, "P", replay)).dump();
  }
  EXPECT_EQ(first, second);
  EXPECT_EQ(first, report_to_json(live).dump());
  std::remove(path.c_str());
}

RunReport fake_report(const std::string& id, size_t n_try, const std::string& pacer,
                      const std::string& online, uint64_t tokens) {
  RunReport r;
  r.problem_id = id;
  r.config.screening.n_try = n_try;
  r.pacer.answer = pacer;
  r.online.answer = online;
  r.mv.answer = online;
  r.final_answer = pacer;
  r.ledger.warmup_tokens = tokens;
  r.ledger.review_tokens = 10;
  return r;
}

TEST(Pareto, CountsAccuracy) {
  const std::map<std::string, std::string> truth{{"a", "1"}, {"b", "2"}, {"c", "3"}};
  const std::vector<RunReport> reports{fake_report("a", 64, "1", "9", 100),
                                       fake_report("b", 64, "2", "2", 200),
                                       fake_report("c", 64, "4", "4", 300)};
  const auto rows = pareto(reports, truth);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].method, "pacer");
  EXPECT_DOUBLE_EQ(rows[0].accuracy, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[0].mean_tokens, 210.0);
  EXPECT_EQ(rows[1].method, "online");
  EXPECT_DOUBLE_EQ(rows[1].accuracy, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[1].mean_tokens, 200.0);
}

TEST(Pareto, EmptyBatchIsHeaderOnly) {
  EXPECT_EQ(pareto_csv(pareto({}, {})), "method,n_try,mean_tokens,accuracy,problems\n");
}

TEST(Pareto, MixedBudgetsAndMissingTruth) {
  const std::map<std::string, std::string> truth{{"a", "1"}, {"b", "2"}};
  const std::vector<RunReport> reports{fake_report("a", 64, "1", "1", 100),
                                       fake_report("b", 64, "2", "2", 100),
                                       fake_report("a", 128, "1", "1", 100),
                                       fake_report("zzz", 128, "1", "1", 100)};
  std::vector<std::string> warnings;
  const auto rows = pareto(reports, truth, &warnings);
  EXPECT_EQ(rows.size(), 6u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("zzz"), std::string::npos);
  EXPECT_EQ(rows[0].n_try, 64u);
  EXPECT_EQ(rows[0].problems, 2u);
  EXPECT_EQ(rows[1].n_try, 128u);
  EXPECT_EQ(rows[1].problems, 1u);
}

TEST(GroundTruth, FormatsAndCanonicalization) {
  const std::string path = (std::filesystem::temp_directory_path() /
                            ("pacer_truth_" + std::to_string(::getpid()) + ".txt")).string();
  { std::ofstream(path) << "# comment\nq1 007\nq2,\\frac{1}{2}\n\nq3\t$5$\n"; }
  const auto truth = read_ground_truth(path);
  EXPECT_EQ(truth.at("q1"), "7");
  EXPECT_EQ(truth.at("q2"), "\\frac{1}{2}");
  EXPECT_EQ(truth.at("q3"), "5");
  { std::ofstream(path) << "lonely\n"; }
  EXPECT_THROW(read_ground_truth(path), Error);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace pacer
