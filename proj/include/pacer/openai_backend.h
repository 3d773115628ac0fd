#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "pacer/backend.h"

namespace pacer {

// Streaming client for OpenAI-compatible completion servers (vLLM, SGLang,
// llama.cpp server, ...). Every chunk must carry per-token top-k logprobs;
// the first chunk without them fails the stream with kUnsupportedBackend.
//
// The API key is read from the environment variable named by
// `api_key_env` at request time and is never logged.
struct OpenAIBackendOptions {
  std::string base_url = "http://localhost:8000";
  std::string api = "completions";  // "completions" or "chat"
  std::string api_key_env = "PACER_API_KEY";
  int connect_timeout_sec = 10;
  int read_timeout_sec = 600;
};

class OpenAIBackend : public Backend {
 public:
  explicit OpenAIBackend(OpenAIBackendOptions options);

  std::unique_ptr<TokenStream> generate_stream(
      const GenerationRequest& request) override;

  const OpenAIBackendOptions& options() const { return options_; }

 private:
  OpenAIBackendOptions options_;
};

namespace openai_wire {

// Request body for the configured api flavour.
nlohmann::json request_body(const GenerationRequest& request,
                            const std::string& api);

struct ChunkTokens {
  std::vector<TokenStep> steps;
  std::optional<std::string> finish_reason;
};

// Decodes one `data:` payload of the event stream. Throws
// kUnsupportedBackend when a token arrives without top-k logprobs.
ChunkTokens parse_chunk(const nlohmann::json& chunk, const std::string& api,
                        size_t k);

}  // namespace openai_wire

}  // namespace pacer
