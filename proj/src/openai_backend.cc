#include "pacer/openai_backend.h"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <variant>

#include <httplib.h>

#include "pacer/error.h"

namespace pacer {

namespace openai_wire {

using nlohmann::json;

json request_body(const GenerationRequest& request, const std::string& api) {
  json body{{"model", request.model_name},
            {"max_tokens", request.max_tokens},
            {"temperature", request.temperature},
            {"top_p", request.top_p},
            {"stream", request.stream}};
  if (api == "chat") {
    body["messages"] = json::array({json{{"role", "user"}, {"content", request.prompt}}});
    body["logprobs"] = true;
    body["top_logprobs"] = request.top_logprobs;
  } else {
    body["prompt"] = request.prompt;
    body["logprobs"] = request.top_logprobs;
  }
  return body;
}

namespace {

std::vector<double> sorted_topk(std::vector<double> values, size_t k) {
  std::sort(values.begin(), values.end(), std::greater<>());
  if (values.size() < k) {
    throw Error(ErrorKind::kMalformedStep,
                "backend returned " + std::to_string(values.size()) +
                    " logprobs, expected " + std::to_string(k));
  }
  values.resize(k);
  return values;
}

[[noreturn]] void unsupported(const std::string& why) {
  throw Error(ErrorKind::kUnsupportedBackend,
              "backend does not report top-k logprobs: " + why);
}

}  // namespace

ChunkTokens parse_chunk(const json& chunk, const std::string& api, size_t k) {
  ChunkTokens out;
  if (!chunk.contains("choices") || chunk["choices"].empty()) return out;
  const json& choice = chunk["choices"][0];

  if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
    out.finish_reason = choice["finish_reason"].get<std::string>();
  }

  if (api == "chat") {
    const bool has_text = choice.contains("delta") &&
                          choice["delta"].contains("content") &&
                          choice["delta"]["content"].is_string() &&
                          !choice["delta"]["content"].get<std::string>().empty();
    if (!choice.contains("logprobs") || choice["logprobs"].is_null() ||
        !choice["logprobs"].contains("content") ||
        choice["logprobs"]["content"].is_null()) {
      if (has_text) unsupported("chunk without logprobs.content");
      return out;
    }
    for (const json& tok : choice["logprobs"]["content"]) {
      if (!tok.contains("top_logprobs") || tok["top_logprobs"].empty()) {
        unsupported("token without top_logprobs");
      }
      std::vector<double> values;
      for (const json& alt : tok["top_logprobs"]) {
        values.push_back(alt.at("logprob").get<double>());
      }
      TokenStep step;
      step.token_text = tok.at("token").get<std::string>();
      step.topk_logprobs = sorted_topk(std::move(values), k);
      out.steps.push_back(std::move(step));
    }
    return out;
  }

  const bool has_text = choice.contains("text") && choice["text"].is_string() &&
                        !choice["text"].get<std::string>().empty();
  if (!choice.contains("logprobs") || choice["logprobs"].is_null()) {
    if (has_text) unsupported("chunk without logprobs");
    return out;
  }
  const json& lp = choice["logprobs"];
  if (!lp.contains("tokens") || !lp.contains("top_logprobs") ||
      lp["top_logprobs"].is_null()) {
    unsupported("logprobs without tokens/top_logprobs");
  }
  const json& tokens = lp["tokens"];
  const json& tops = lp["top_logprobs"];
  if (tokens.size() != tops.size()) {
    unsupported("tokens and top_logprobs differ in length");
  }
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!tops[i].is_object() || tops[i].empty()) {
      unsupported("token without top_logprobs");
    }
    std::vector<double> values;
    for (const auto& [token, value] : tops[i].items()) {
      values.push_back(value.get<double>());
    }
    TokenStep step;
    step.token_text = tokens[i].get<std::string>();
    step.topk_logprobs = sorted_topk(std::move(values), k);
    out.steps.push_back(std::move(step));
  }
  return out;
}

}  // namespace openai_wire

namespace {

FinishReason map_finish(const std::string& reason) {
  if (reason == "length") return FinishReason::kLength;
  return FinishReason::kStop;
}

// Runs the HTTP request on a worker thread and hands decoded steps to the
// consumer through a queue.
class OpenAIStream : public TokenStream {
 public:
  OpenAIStream(const OpenAIBackendOptions& options, GenerationRequest request)
      : options_(options), request_(std::move(request)) {
    worker_ = std::thread([this] { run(); });
  }

  ~OpenAIStream() override {
    cancel();
    if (worker_.joinable()) worker_.join();
  }

  std::optional<TokenStep> next() override {
    if (done_) return std::nullopt;
    if (delivered_ >= request_.max_tokens) {
      cancel();
      return finish(FinishReason::kLength);
    }
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || cancelled_.load(); });
    if (cancelled_.load()) {
      lock.unlock();
      return finish(FinishReason::kCancelled);
    }
    Event ev = std::move(queue_.front());
    queue_.pop_front();
    lock.unlock();

    if (auto* step = std::get_if<TokenStep>(&ev)) {
      step->step_index = static_cast<uint32_t>(++delivered_);
      return std::move(*step);
    }
    if (auto* failure = std::get_if<Failure>(&ev)) {
      if (failure->unsupported) {
        done_ = true;
        reason_ = FinishReason::kError;
        error_ = failure->message;
        throw Error(ErrorKind::kUnsupportedBackend, failure->message);
      }
      error_ = failure->message;
      return finish(FinishReason::kError);
    }
    return finish(std::get<End>(ev).reason);
  }

  void cancel() override {
    {
      std::lock_guard lock(mu_);
      cancelled_.store(true);
    }
    cv_.notify_all();
  }

  FinishReason finish_reason() const override { return reason_; }
  std::string error_message() const override { return error_; }

 private:
  struct End {
    FinishReason reason;
  };
  struct Failure {
    std::string message;
    bool unsupported = false;
  };
  using Event = std::variant<TokenStep, End, Failure>;

  std::optional<TokenStep> finish(FinishReason reason) {
    done_ = true;
    reason_ = reason;
    return std::nullopt;
  }

  void push(Event ev) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(ev));
    }
    cv_.notify_all();
  }

  // Returns false to abort the transfer.
  bool consume_line(const std::string& line) {
    if (line.rfind("data:", 0) != 0) return true;
    std::string payload = line.substr(5);
    if (!payload.empty() && payload[0] == ' ') payload.erase(0, 1);
    if (payload == "[DONE]") {
      ended_ = true;
      push(End{finish_ ? map_finish(*finish_) : FinishReason::kStop});
      return false;
    }
    try {
      auto chunk = nlohmann::json::parse(payload);
      if (chunk.contains("error")) {
        push(Failure{"server error: " + chunk["error"].dump()});
        ended_ = true;
        return false;
      }
      auto decoded = openai_wire::parse_chunk(chunk, options_.api,
                                              request_.top_logprobs);
      for (auto& step : decoded.steps) push(std::move(step));
      if (decoded.finish_reason) finish_ = decoded.finish_reason;
    } catch (const Error& e) {
      push(Failure{e.what(), e.kind() == ErrorKind::kUnsupportedBackend});
      ended_ = true;
      return false;
    } catch (const nlohmann::json::exception& e) {
      push(Failure{std::string("malformed stream chunk: ") + e.what()});
      ended_ = true;
      return false;
    }
    return true;
  }

  void run() {
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.connect_timeout_sec, 0);
    client.set_read_timeout(options_.read_timeout_sec, 0);

    httplib::Request req;
    req.method = "POST";
    req.path = options_.api == "chat" ? "/v1/chat/completions" : "/v1/completions";
    req.headers.emplace("Content-Type", "application/json");
    req.headers.emplace("Accept", "text/event-stream");
    if (const char* key = std::getenv(options_.api_key_env.c_str())) {
      req.headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    req.body = openai_wire::request_body(request_, options_.api).dump();

    int status = 0;
    std::string error_body;
    std::string buffer;
    req.response_handler = [&](const httplib::Response& res) {
      status = res.status;
      return !cancelled_.load();
    };
    req.content_receiver = [&](const char* data, size_t n, uint64_t, uint64_t) {
      if (cancelled_.load()) return false;
      if (status < 200 || status >= 300) {
        error_body.append(data, n);
        return true;
      }
      buffer.append(data, n);
      size_t pos;
      while ((pos = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, pos);
        buffer.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!consume_line(line)) return false;
      }
      return true;
    };

    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    client.send(req, res, err);

    if (ended_ || cancelled_.load()) return;
    if (err != httplib::Error::Success) {
      push(Failure{"connection error: " + httplib::to_string(err)});
      return;
    }
    if (status < 200 || status >= 300) {
      push(Failure{"HTTP " + std::to_string(status) + ": " + error_body});
      return;
    }
    if (!buffer.empty()) {
      if (!consume_line(buffer)) return;
    }
    // Stream closed without [DONE].
    push(End{finish_ ? map_finish(*finish_) : FinishReason::kStop});
  }

  OpenAIBackendOptions options_;
  GenerationRequest request_;
  std::thread worker_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> queue_;
  std::atomic<bool> cancelled_{false};

  // Worker-thread state.
  bool ended_ = false;
  std::optional<std::string> finish_;

  // Consumer-thread state.
  bool done_ = false;
  size_t delivered_ = 0;
  FinishReason reason_ = FinishReason::kStop;
  std::string error_;
};

}  // namespace

OpenAIBackend::OpenAIBackend(OpenAIBackendOptions options)
    : options_(std::move(options)) {
  if (options_.api != "completions" && options_.api != "chat") {
    throw Error(ErrorKind::kConfig, "api must be 'completions' or 'chat'");
  }
}

std::unique_ptr<TokenStream> OpenAIBackend::generate_stream(
    const GenerationRequest& request) {
  return std::make_unique<OpenAIStream>(options_, request);
}

}  // namespace pacer
