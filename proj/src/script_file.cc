#include "pacer/script_file.h"

#include <fstream>

#include "pacer/error.h"

namespace pacer {

using nlohmann::json;

namespace {

TokenStep parse_step(const json& s, size_t k) {
  const std::string token = s.value("token", std::string());
  if (s.contains("topk_logprobs")) {
    TokenStep step;
    step.token_text = token;
    step.topk_logprobs = s.at("topk_logprobs").get<std::vector<double>>();
    return step;
  }
  return uniform_step(token, s.at("logprob").get<double>(), k);
}

}  // namespace

std::shared_ptr<ScriptedBackend> scripted_backend_from_json(const json& j) {
  auto backend = std::make_shared<ScriptedBackend>();
  try {
    const std::string match = j.value("match", std::string("ordered"));
    if (match != "ordered" && match != "prompt_hash") {
      throw Error(ErrorKind::kConfig, "script match must be 'ordered' or 'prompt_hash'");
    }
    const bool by_prompt = match == "prompt_hash";
    backend->set_match_mode(by_prompt ? ScriptedBackend::MatchMode::kPromptHash
                                      : ScriptedBackend::MatchMode::kOrdered);
    const size_t k = j.value("k", size_t{5});

    for (const auto& entry : j.at("scripts")) {
      ScriptedBackend::Script script;
      if (entry.contains("filler")) {
        const json& f = entry.at("filler");
        const size_t count = f.at("count").get<size_t>();
        const TokenStep step =
            uniform_step(f.value("token", std::string(" ")), f.at("logprob").get<double>(), k);
        script.steps.assign(count, step);
      }
      if (entry.contains("steps")) {
        for (const auto& s : entry.at("steps")) script.steps.push_back(parse_step(s, k));
      }
      script.finish_reason =
          finish_reason_from_string(entry.value("finish_reason", std::string("stop")));
      if (entry.contains("fail_after")) script.fail_after = entry.at("fail_after").get<size_t>();

      const size_t repeat = entry.value("repeat", size_t{1});
      if (by_prompt) {
        const std::string prompt = entry.at("prompt").get<std::string>();
        for (size_t r = 0; r < repeat; ++r) backend->add_prompt_script(prompt, script);
      } else {
        const uint64_t seq = entry.at("sequence").get<uint64_t>();
        for (size_t r = 0; r < repeat; ++r) backend->set_script(seq + r, script);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("malformed script: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kStore) throw Error(ErrorKind::kConfig, e.what());
    throw;
  }
  return backend;
}

std::shared_ptr<ScriptedBackend> load_script_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open script file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, path + ": " + e.what());
  }
  return scripted_backend_from_json(j);
}

}  // namespace pacer
