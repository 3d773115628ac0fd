#include "pacer/record_store.h"

#include "pacer/error.h"

namespace pacer {
namespace {

using nlohmann::json;

json request_to_json(const GenerationRequest& r) {
  return json{{"prompt", r.prompt},
              {"max_tokens", r.max_tokens},
              {"temperature", r.temperature},
              {"top_p", r.top_p},
              {"top_logprobs", r.top_logprobs},
              {"stream", r.stream},
              {"model_name", r.model_name},
              {"sequence", r.sequence}};
}

GenerationRequest request_from_json(const json& j) {
  GenerationRequest r;
  r.prompt = j.at("prompt").get<std::string>();
  r.max_tokens = j.at("max_tokens").get<uint32_t>();
  r.temperature = j.at("temperature").get<double>();
  r.top_p = j.at("top_p").get<double>();
  r.top_logprobs = j.at("top_logprobs").get<uint32_t>();
  r.stream = j.at("stream").get<bool>();
  r.model_name = j.at("model_name").get<std::string>();
  r.sequence = j.at("sequence").get<uint64_t>();
  return r;
}

Error store_error(const std::string& path, size_t line, const std::string& what) {
  return Error(ErrorKind::kStore,
               path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

json record_to_json(const TraceRecord& record) {
  json steps = json::array();
  for (const auto& s : record.steps) {
    json lp = json::array();
    for (double v : s.topk_logprobs) lp.push_back(quantize_logprob(v));
    steps.push_back(
        json{{"t", s.step_index}, {"token", s.token_text}, {"topk_logprobs", lp}});
  }
  return json{{"trace_id", record.trace_id},
              {"request", request_to_json(record.request)},
              {"steps", std::move(steps)},
              {"finish_reason", to_string(record.finish_reason)}};
}

TraceRecord record_from_json(const json& j) {
  TraceRecord r;
  r.trace_id = j.at("trace_id").get<uint64_t>();
  r.request = request_from_json(j.at("request"));
  for (const auto& s : j.at("steps")) {
    TokenStep step;
    step.step_index = s.at("t").get<uint32_t>();
    step.token_text = s.at("token").get<std::string>();
    step.topk_logprobs = s.at("topk_logprobs").get<std::vector<double>>();
    r.steps.push_back(std::move(step));
  }
  r.finish_reason =
      finish_reason_from_string(j.at("finish_reason").get<std::string>());
  return r;
}

std::string record_to_line(const TraceRecord& record) {
  return record_to_json(record).dump();
}

StoreWriter::StoreWriter(const std::string& path, json header_extra)
    : out_(path, std::ios::trunc), path_(path) {
  if (!out_) {
    throw Error(ErrorKind::kStore, "cannot open " + path + " for writing");
  }
  json header = header_extra.is_object() ? std::move(header_extra) : json::object();
  header["schema_version"] = kStoreSchemaVersion;
  out_ << header.dump() << '\n';
  out_.flush();
}

void StoreWriter::append(const TraceRecord& record) {
  out_ << record_to_line(record) << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorKind::kStore, "write failed: " + path_);
}

StoreReader::StoreReader(const std::string& path) : in_(path), path_(path) {
  if (!in_) throw Error(ErrorKind::kStore, "cannot open " + path);
  std::string line;
  if (!std::getline(in_, line)) {
    throw store_error(path_, 1, "missing header line");
  }
  line_no_ = 1;
  try {
    header_ = json::parse(line);
  } catch (const json::exception& e) {
    throw store_error(path_, 1, std::string("malformed header: ") + e.what());
  }
  if (!header_.is_object() || !header_.contains("schema_version")) {
    throw store_error(path_, 1, "header lacks schema_version");
  }
  if (header_["schema_version"] != kStoreSchemaVersion) {
    throw store_error(path_, 1,
                      "unsupported schema_version " +
                          header_["schema_version"].dump());
  }
}

std::optional<TraceRecord> StoreReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    try {
      return record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw store_error(path_, line_no_, std::string("malformed record: ") + e.what());
    } catch (const Error& e) {
      throw store_error(path_, line_no_, e.what());
    }
  }
  return std::nullopt;
}

void write_store(const std::string& path, const std::vector<TraceRecord>& records,
                 json header_extra) {
  StoreWriter writer(path, std::move(header_extra));
  for (const auto& r : records) writer.append(r);
}

std::vector<TraceRecord> read_store(const std::string& path, json* header) {
  StoreReader reader(path);
  if (header) *header = reader.header();
  std::vector<TraceRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

}  // namespace pacer
