#pragma once

// Run configuration: one JSON document shared by every CLI subcommand.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/llm.hpp"
#include "nambert/macu.hpp"
#include "nambert/model.hpp"
#include "nambert/trainer.hpp"

namespace nambert {

struct DataPaths {
  std::filesystem::path pinyin;
  std::filesystem::path glyphs;
  std::filesystem::path clean_train;  // one sentence per line
  std::filesystem::path clean_test;
  std::filesystem::path train;        // parallel TSV
  std::filesystem::path test;
};

struct PrepareConfig {
  double error_rate = 0.15;
  // Only confusion pairs at or above this phonetic similarity feed synthesis.
  double min_similarity = 0.95;
  // Share of those pairs held out of training and used only in the test set.
  double holdout_fraction = 0.3;
};

struct MacuRunConfig {
  std::size_t filter_sentences = 200;
  std::string kind = "both";  // phonetic | graphemic | both
  std::size_t batch_size = 64;
};

struct ProbeRunConfig {
  double test_fraction = 0.3;
  int glyph_clusters = 8;
  int epochs = 300;
  double lr = 0.05;
};

struct LlmRunConfig {
  LlmEndpoint endpoint;
  std::string prompt_template = kDefaultPromptTemplate;
  int concurrency = 4;
  std::filesystem::path replay;  // score an existing log instead of calling the endpoint
  std::size_t limit = 0;         // 0 = whole test set
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string precision = "float";  // float | double
  DataPaths data;
  PrepareConfig prepare;
  ConfusionBuildOptions confusion;
  ModelConfig model;
  TrainConfig train;
  Ablation ablation;
  GlyphPretrainConfig glyph;
  MlmConfig mlm;
  MacuRunConfig macu;
  ProbeRunConfig probe;
  LlmRunConfig llm;

  nlohmann::json effective;  // the merged document the fields were read from
};

// "a.b.c=value": value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Relative data paths resolve against base_dir. Unknown keys are ConfigErrors.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::uint64_t fnv1a64(std::string_view bytes);
// Hash of the canonical dump of the effective config, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace nambert
