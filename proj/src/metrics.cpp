#include "nambert/metrics.hpp"

#include "nambert/error.hpp"

namespace nambert {

CscMetrics sentence_metrics(std::span<const ScoredSentence> rows) {
  CscMetrics m;
  m.sentences = rows.size();
  for (const auto& r : rows) {
    if (r.source.size() != r.target.size()) throw InputError("source and target lengths differ");
    if (!r.forced_wrong && r.prediction.size() != r.source.size())
      throw InputError("prediction and source lengths differ");
    const bool erroneous = r.target != r.source;
    const bool flagged = r.forced_wrong || r.prediction != r.source;
    m.erroneous += erroneous;
    m.flagged += flagged;
    m.true_positive += flagged && !r.forced_wrong && r.prediction == r.target;
  }
  m.precision = m.flagged ? static_cast<double>(m.true_positive) / static_cast<double>(m.flagged) : 0.0;
  m.recall = m.erroneous ? static_cast<double>(m.true_positive) / static_cast<double>(m.erroneous) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

CscMetrics sentence_metrics(std::span<const std::u32string> sources, std::span<const std::u32string> predictions,
                            std::span<const std::u32string> targets) {
  if (sources.size() != predictions.size() || sources.size() != targets.size()) {
    throw DimensionError("sentence_metrics: sources, predictions and targets must have equal counts");
  }
  std::vector<ScoredSentence> rows;
  rows.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) rows.push_back({sources[i], predictions[i], targets[i], false});
  return sentence_metrics(rows);
}

nlohmann::json to_json(const CscMetrics& m) {
  return {{"sentences", m.sentences}, {"flagged", m.flagged},     {"erroneous", m.erroneous},
          {"true_positive", m.true_positive}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1}};
}

std::vector<std::string> check_metrics_report(const nlohmann::json& j) {
  std::vector<std::string> errs;
  if (!j.is_object()) return {"report must be an object"};
  for (const char* k : {"sentences", "flagged", "erroneous", "true_positive"}) {
    if (!j.contains(k) || !j[k].is_number_integer() || j[k].get<long long>() < 0)
      errs.push_back(std::string("'") + k + "' must be a non-negative integer");
  }
  for (const char* k : {"precision", "recall", "f1"}) {
    if (!j.contains(k) || !j[k].is_number() || j[k].get<double>() < 0 || j[k].get<double>() > 1)
      errs.push_back(std::string("'") + k + "' must be a number in [0, 1]");
  }
  return errs;
}

}  // namespace nambert
