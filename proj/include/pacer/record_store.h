#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacer/backend.h"

namespace pacer {

inline constexpr int kStoreSchemaVersion = 1;

// JSONL trace store. The first line is a header object carrying
// `schema_version` plus optional session metadata (problem text, config);
// every following line is one TraceRecord:
//
//   {"trace_id":..,"request":{..},"steps":[{"t":1,"token":"..",
//    "topk_logprobs":[..]}],"finish_reason":"stop"}
//
// Logprobs are written with 9 significant digits.
nlohmann::json record_to_json(const TraceRecord& record);
TraceRecord record_from_json(const nlohmann::json& j);
std::string record_to_line(const TraceRecord& record);

class StoreWriter {
 public:
  // Truncates `path` and writes the header line.
  StoreWriter(const std::string& path, nlohmann::json header_extra = {});

  void append(const TraceRecord& record);

 private:
  std::ofstream out_;
  std::string path_;
};

// Reads records one at a time so that everything before a malformed line
// stays usable. Errors (kStore) name the 1-based line number.
class StoreReader {
 public:
  explicit StoreReader(const std::string& path);

  const nlohmann::json& header() const { return header_; }
  std::optional<TraceRecord> next();

 private:
  std::ifstream in_;
  std::string path_;
  size_t line_no_ = 0;
  nlohmann::json header_;
};

void write_store(const std::string& path, const std::vector<TraceRecord>& records,
                 nlohmann::json header_extra = {});
// Strict: throws on the first malformed line.
std::vector<TraceRecord> read_store(const std::string& path,
                                    nlohmann::json* header = nullptr);

}  // namespace pacer
