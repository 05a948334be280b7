#pragma once

// Sentence-level correction precision / recall / F1.

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nambert {

struct ScoredSentence {
  std::u32string source;
  std::u32string prediction;
  std::u32string target;
  // Counts as flagged and wrong regardless of the prediction (e.g. an LLM
  // answer of the wrong length).
  bool forced_wrong = false;
};

struct CscMetrics {
  std::size_t sentences = 0;
  std::size_t flagged = 0;        // prediction != source
  std::size_t erroneous = 0;      // target != source
  std::size_t true_positive = 0;  // flagged and prediction == target
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

CscMetrics sentence_metrics(std::span<const ScoredSentence> rows);
CscMetrics sentence_metrics(std::span<const std::u32string> sources, std::span<const std::u32string> predictions,
                            std::span<const std::u32string> targets);

nlohmann::json to_json(const CscMetrics& m);
std::vector<std::string> check_metrics_report(const nlohmann::json& j);

}  // namespace nambert
