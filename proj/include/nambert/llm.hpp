#pragma once

// Chat-completions client used to score prompted LLM corrections with the same
// sentence metrics as the model.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/corpus.hpp"
#include "nambert/metrics.hpp"

namespace nambert {

inline constexpr const char* kSentencePlaceholder = "{sentence}";
// Single-turn instruction; {sentence} is replaced by the input.
extern const std::string kDefaultPromptTemplate;

// Throws ConfigError for an empty template or one without {sentence}, and
// InputError for an empty sentence.
std::string build_prompt(const std::u32string& sentence, const std::string& tmpl = kDefaultPromptTemplate);

struct LlmEndpoint {
  std::string base_url;  // e.g. https://host/v1; requests go to <base_url>/chat/completions
  std::string api_key;
  std::string model;
  double timeout_s = 30.0;
  int retries = 3;          // extra attempts after the first on transient errors
  double backoff_s = 0.5;   // doubles after every failed attempt
};

// CSC_LLM_BASE_URL, CSC_LLM_API_KEY and CSC_LLM_MODEL override the fields of `base`.
LlmEndpoint endpoint_from_env(LlmEndpoint base);

enum class LlmStatus { ok, length_mismatch, transport_error, http_error, bad_response };
std::string to_string(LlmStatus s);
LlmStatus parse_llm_status(const std::string& s);

struct LlmOutcome {
  std::size_t index = 0;
  std::u32string source;
  std::u32string target;
  std::u32string prediction;  // source for failures other than length mismatch
  std::string prompt;
  std::string response;       // raw message content (or body on HTTP errors)
  LlmStatus status = LlmStatus::ok;
  int http_status = 0;
  int attempts = 0;
  std::string error;

  bool transport_failure() const {
    return status == LlmStatus::transport_error || status == LlmStatus::http_error || status == LlmStatus::bad_response;
  }
};

// Strips surrounding whitespace (including ideographic spaces) and matching
// quote pairs.
std::string clean_response(const std::string& text);

// Never throws for network, HTTP or payload problems; they become failure records.
LlmOutcome correct_via_llm(const std::u32string& sentence, const LlmEndpoint& endpoint,
                           const std::string& tmpl = kDefaultPromptTemplate);

struct LlmEvalOptions {
  std::string prompt_template = kDefaultPromptTemplate;
  int concurrency = 4;
  std::filesystem::path log_path;  // JSON lines; empty = no log
  double max_failure_fraction = 0.5;
};

struct LlmEvaluation {
  CscMetrics metrics;
  std::vector<LlmOutcome> outcomes;  // in corpus order
  std::size_t transport_failures = 0;
  std::size_t length_mismatches = 0;
};

// Scores outcomes: length mismatches count as flagged and wrong, transport
// failures as unchanged sentences.
LlmEvaluation score_outcomes(std::vector<LlmOutcome> outcomes);

// Throws ProtocolError (after writing the log) when more than
// max_failure_fraction of the requests fail in transport.
LlmEvaluation evaluate_llm(std::span<const Example> corpus, const LlmEndpoint& endpoint, const LlmEvalOptions& opts);

// Offline re-scoring of a log written by evaluate_llm.
LlmEvaluation replay_llm_log(const std::filesystem::path& path);

nlohmann::json to_json(const LlmOutcome& o);
LlmOutcome llm_outcome_from_json(const nlohmann::json& j);

}  // namespace nambert
