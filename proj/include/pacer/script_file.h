#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "pacer/backend.h"

namespace pacer {

// Builds a mock backend from a JSON script:
//
//   {"match": "ordered",            // or "prompt_hash"
//    "k": 5,                        // logprob list length for shorthand steps
//    "scripts": [
//      {"sequence": 0,              // "prompt": "..." in prompt_hash mode
//       "filler": {"count": 99, "token": "x ", "logprob": -0.1},
//       "steps": [{"token": " \\boxed{4}", "logprob": -0.1},
//                 {"token": ".", "topk_logprobs": [-0.1, -2.0]}],
//       "finish_reason": "stop",
//       "fail_after": 3}]}
//
// Filler steps come first, then the explicit steps. "repeat" on a script
// entry (default 1) assigns the same script to consecutive sequences.
std::shared_ptr<ScriptedBackend> scripted_backend_from_json(const nlohmann::json& j);
std::shared_ptr<ScriptedBackend> load_script_file(const std::string& path);

}  // namespace pacer
