// Command-line entry point: run, replay, simulate, pareto, inspect.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pacer/error.h"
#include "pacer/harness.h"
#include "pacer/openai_backend.h"
#include "pacer/record_store.h"
#include "pacer/script_file.h"
#include "pacer/stability.h"
#include "pacer/theory_sim.h"

namespace {

using nlohmann::json;
using namespace pacer;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write " + path);
  out << text;
}

// Flag overrides layered on top of the config file.
struct Overrides {
  std::optional<size_t> n_try, n_init, k, window, parallel, top_n, l_sum, l_rev, tail;
  std::optional<uint32_t> max_tokens;
  std::optional<double> eta, temperature, top_p, weight_temperature;
  std::optional<std::string> model;
  std::optional<uint64_t> seed;
  bool skip_unanimous = false;
  bool raw_weights = false;

  void add_to(CLI::App* app) {
    app->add_option("--n-try", n_try, "Total attempt budget");
    app->add_option("--n-init", n_init, "Warmup attempts");
    app->add_option("--eta", eta, "Screening percentile (keep top eta%)");
    app->add_option("--k", k, "Top-k logprobs per step");
    app->add_option("--window", window, "Sliding window W");
    app->add_option("--max-tokens", max_tokens, "Per-attempt token cap");
    app->add_option("--temperature", temperature, "Sampling temperature");
    app->add_option("--top-p", top_p, "Nucleus sampling p");
    app->add_option("--model", model, "Model name sent to the server");
    app->add_option("--parallel", parallel, "Concurrent streams");
    app->add_option("--top-n", top_n, "Packet candidates N");
    app->add_option("--l-sum", l_sum, "Rationale budget L_sum");
    app->add_option("--l-rev", l_rev, "Review budget L_rev");
    app->add_option("--trace-tail-budget", tail, "Own-trace tail in review prompts");
    app->add_option("--weight-temperature", weight_temperature, "T in exp(S/T)");
    app->add_option("--seed", seed, "Recorded seed");
    app->add_flag("--skip-unanimous", skip_unanimous, "Skip Phase II on a unanimous pool");
    app->add_flag("--raw-weights", raw_weights, "Vote with raw S instead of exp(S/T)");
  }

  void apply(PipelineConfig& c) const {
    if (n_try) c.screening.n_try = *n_try;
    if (n_init) c.screening.n_init = *n_init;
    if (eta) c.screening.eta = *eta;
    if (k) c.sampling.k = *k;
    if (window) c.sampling.window = *window;
    if (max_tokens) c.sampling.max_tokens = *max_tokens;
    if (temperature) c.sampling.temperature = *temperature;
    if (top_p) c.sampling.top_p = *top_p;
    if (model) c.sampling.model_name = *model;
    if (parallel) c.sampling.parallel = c.revision.parallel = *parallel;
    if (top_n) c.top_n = *top_n;
    if (l_sum) c.l_sum = *l_sum;
    if (l_rev) c.revision.l_rev = *l_rev;
    if (tail) c.revision.trace_tail_budget = *tail;
    if (weight_temperature) c.weights.temperature = *weight_temperature;
    if (seed) c.seed = *seed;
    if (skip_unanimous) c.revision.skip_unanimous = true;
    if (raw_weights) c.weights.mode = WeightMode::kRaw;
  }
};

int emit_report(const RunReport& report, bool as_json, const std::string& report_path) {
  const std::string j = report_to_json(report).dump(2) + "\n";
  if (!report_path.empty()) write_output(report_path, j);
  std::cout << (as_json ? j : report_to_text(report));
  if (report.status == RunStatus::kFailed) {
    std::cerr << "pacer: run failed: " << report.error << "\n";
    return kExitFailure;
  }
  return 0;
}

sim::RateCurve parse_curve(const std::string& spec) {
  const size_t colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  std::vector<double> v;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  }
  if (kind == "const" && v.size() == 1) return sim::RateCurve::constant(v[0]);
  if (kind == "step" && v.size() == 3) return sim::RateCurve::step(v[0], v[1], v[2]);
  if (kind == "logistic" && v.size() == 4) {
    return sim::RateCurve::logistic(v[0], v[1], v[2], v[3]);
  }
  throw Error(ErrorKind::kConfig, "bad rate curve '" + spec +
                                      "' (const:v | step:below,above,at | "
                                      "logistic:low,high,mid,steepness)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pacer: stability-screened sampling with packet-conditioned revision"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline on one problem");
  std::string config_path, problem_path, problem_id, backend_kind = "mock";
  std::string script_path, record_path, report_path;
  std::string base_url = "http://localhost:8000", api = "completions";
  std::string api_key_env = "PACER_API_KEY";
  bool run_json = false;
  Overrides overrides;
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--problem", problem_path, "Problem text file")->required();
  run->add_option("--problem-id", problem_id, "Identifier used by pareto");
  run->add_option("--backend", backend_kind, "mock or openai")
      ->check(CLI::IsMember({"mock", "openai"}));
  run->add_option("--script", script_path, "Mock script (JSON)");
  run->add_option("--base-url", base_url, "OpenAI-compatible server URL");
  run->add_option("--api", api, "completions or chat")
      ->check(CLI::IsMember({"completions", "chat"}));
  run->add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
  run->add_option("--record", record_path, "Write every stream to this trace store");
  run->add_option("--report", report_path, "Also write the JSON report here");
  run->add_flag("--json", run_json, "Print the JSON report");
  overrides.add_to(run);

  // replay
  auto* replay = app.add_subcommand("replay", "Re-run a recorded session from its store");
  std::string store_path, replay_report;
  bool replay_json = false;
  replay->add_option("--store", store_path, "Trace store written by run --record")->required();
  replay->add_option("--report", replay_report, "Also write the JSON report here");
  replay->add_flag("--json", replay_json, "Print the JSON report");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo checks of the revision theory");
  std::string sim_mode = "vote", sim_out, alpha_curve = "const:0.5", beta_curve = "const:0.2";
  std::optional<int> sim_b;
  std::optional<double> sim_pp;
  uint64_t sim_trials = 100000, sim_seed = 1;
  int sim_arity = 3;
  bool sim_lognormal = false;
  double sim_p = 0.6;
  std::vector<double> sim_margins{0.0};
  simulate->add_option("--mode", sim_mode, "vote or revision")
      ->check(CLI::IsMember({"vote", "revision"}));
  simulate->add_option("--B", sim_b, "Single pool size (with --p-prime)");
  simulate->add_option("--p-prime", sim_pp, "Single post-review accuracy");
  simulate->add_option("--trials", sim_trials, "Trials per grid point");
  simulate->add_option("--seed", sim_seed, "Master seed");
  simulate->add_option("--arity", sim_arity, "Number of distinct wrong answers");
  simulate->add_flag("--lognormal-weights", sim_lognormal, "Random positive vote weights");
  simulate->add_option("--p", sim_p, "Pre-review accuracy (revision mode)");
  simulate->add_option("--alpha", alpha_curve, "Repair rate curve (revision mode)");
  simulate->add_option("--beta", beta_curve, "Damage rate curve (revision mode)");
  simulate->add_option("--margins", sim_margins, "Margin grid (revision mode)")->delimiter(',');
  simulate->add_option("--out", sim_out, "CSV output path (default stdout)");

  // pareto
  auto* pareto_cmd = app.add_subcommand("pareto", "Token/accuracy rows from JSON reports");
  std::vector<std::string> report_files;
  std::string truth_path, pareto_out;
  pareto_cmd->add_option("reports", report_files, "JSON report files");
  pareto_cmd->add_option("--truth", truth_path, "Ground truth: id and answer per line")
      ->required();
  pareto_cmd->add_option("--out", pareto_out, "CSV output path (default stdout)");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Dump one stored trace's stability trajectory");
  std::string inspect_store;
  uint64_t inspect_id = 0;
  std::optional<size_t> inspect_window, inspect_k;
  inspect->add_option("--store", inspect_store, "Trace store")->required();
  inspect->add_option("--trace-id", inspect_id, "Trace id")->required();
  inspect->add_option("--window", inspect_window, "Window W (default: from the store header)");
  inspect->add_option("--k", inspect_k, "Top-k (default: from the store header)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      PipelineConfig config;
      if (!config_path.empty()) config = config_from_json(json::parse(read_file(config_path)));
      overrides.apply(config);
      config.validate();
      const std::string problem = read_file(problem_path);

      std::shared_ptr<Backend> backend;
      if (backend_kind == "mock") {
        if (script_path.empty()) {
          throw Error(ErrorKind::kConfig, "--backend mock needs --script");
        }
        backend = load_script_file(script_path);
      } else {
        OpenAIBackendOptions opts;
        opts.base_url = base_url;
        opts.api = api;
        opts.api_key_env = api_key_env;
        backend = std::make_shared<OpenAIBackend>(opts);
      }

      if (record_path.empty()) {
        return emit_report(run_pipeline(config, problem, *backend, problem_id), run_json,
                           report_path);
      }
      RecordingBackend recorder(backend);
      RunReport report = run_pipeline(config, problem, recorder, problem_id);
      write_store(record_path, recorder.records(),
                  json{{"problem", problem},
                       {"problem_id", problem_id},
                       {"config", config_to_json(config)}});
      return emit_report(report, run_json, report_path);
    }

    if (*replay) {
      json header;
      std::vector<TraceRecord> records = read_store(store_path, &header);
      if (!header.contains("problem") || !header.contains("config")) {
        throw Error(ErrorKind::kStore, store_path + ": header lacks problem/config");
      }
      const PipelineConfig config = config_from_json(header.at("config"));
      ReplayBackend backend(std::move(records));
      RunReport report = run_pipeline(config, header.at("problem").get<std::string>(), backend,
                                      header.value("problem_id", std::string()));
      return emit_report(report, replay_json, replay_report);
    }

    if (*simulate) {
      if (sim_mode == "revision") {
        sim::RevisionModel model;
        model.p = sim_p;
        model.alpha = parse_curve(alpha_curve);
        model.beta = parse_curve(beta_curve);
        std::ostringstream csv;
        csv << "margin,alpha,beta,pre_accuracy,post_accuracy,closed_form_post,"
               "stabilizing,trials,seed\n";
        char buf[256];
        for (const auto& r : sim::sweep_margin(model, sim_margins, sim_trials, sim_seed)) {
          std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g,%.8f,%.8f,%.8f,%d,%llu,%llu\n",
                        r.margin, r.alpha, r.beta, r.pre.estimate(), r.post.estimate(),
                        r.closed_form_post, sim::stabilizing_check(model.p, r.alpha, r.beta),
                        static_cast<unsigned long long>(sim_trials),
                        static_cast<unsigned long long>(sim_seed));
          csv << buf;
        }
        write_output(sim_out, csv.str());
        return 0;
      }
      if (sim_b.has_value() != sim_pp.has_value()) {
        throw Error(ErrorKind::kConfig, "--B and --p-prime go together");
      }
      const auto weights = sim_lognormal ? sim::EnsembleModel::Weights::kLogNormal
                                         : sim::EnsembleModel::Weights::kUnit;
      std::vector<int> sizes = sim::kDefaultPoolSizes;
      std::vector<double> pps = sim::kDefaultPPrimes;
      if (sim_b) {
        sizes = {*sim_b};
        pps = {*sim_pp};
      }
      write_output(sim_out, sim::sweep_csv(sim::vote_error_sweep(sizes, pps, sim_trials,
                                                                 sim_seed, sim_arity, weights)));
      return 0;
    }

    if (*pareto_cmd) {
      const auto truth = read_ground_truth(truth_path);
      std::vector<RunReport> reports;
      for (const auto& f : report_files) {
        reports.push_back(report_from_json(json::parse(read_file(f))));
      }
      std::vector<std::string> warnings;
      const auto rows = pareto(reports, truth, &warnings);
      for (const auto& w : warnings) std::cerr << "pacer: warning: " << w << "\n";
      write_output(pareto_out, pareto_csv(rows));
      return 0;
    }

    if (*inspect) {
      json header;
      StoreReader reader(inspect_store);
      header = reader.header();
      PipelineConfig defaults;
      if (header.contains("config")) defaults = config_from_json(header.at("config"));
      const size_t window = inspect_window.value_or(defaults.sampling.window);
      const size_t k = inspect_k.value_or(defaults.sampling.k);
      while (auto rec = reader.next()) {
        if (rec->trace_id != inspect_id) continue;
        const StabilityTrajectory tr = compute_trajectory(rec->steps, window, k);
        std::printf("t,U,Ubar,S\n");
        for (size_t t = 0; t < tr.uncertainty.size(); ++t) {
          std::printf("%zu,%.17g,%.17g,%.17g\n", t + 1, tr.uncertainty[t], tr.windowed[t],
                      tr.stability[t]);
        }
        return 0;
      }
      throw Error(ErrorKind::kStore, "trace " + std::to_string(inspect_id) + " not in store");
    }
  } catch (const Error& e) {
    std::cerr << "pacer: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfig ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "pacer: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
