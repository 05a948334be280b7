#pragma once

// Similarity-binned substitution protocol measuring how well a corrector uses
// phonetic and graphemic cues.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/chardata.hpp"
#include "nambert/confusion.hpp"

namespace nambert {

// (1 + cos(f_x, f_y)) / 2. Throws DimensionError on unequal sizes and
// InputError when either vector is all zero.
double char_similarity(std::span<const double> fx, std::span<const double> fy);

// Six 27-way one-hot blocks, one per code slot (162 values).
std::vector<double> phonetic_features(const PinyinCode& code);
// The 1024 pixel intensities.
std::vector<double> glyph_features(const GlyphBitmap& bitmap);

struct ConfusionBuildOptions {
  double tau_p = 0.6;  // graphemic set drops pairs at or above this phonetic similarity
  double tau_g = 0.6;  // phonetic set drops pairs at or above this graphemic similarity
};

struct ConfusionSets {
  ConfusionSet phonetic;
  ConfusionSet graphemic;
  std::vector<char32_t> skipped_chars;  // no pinyin entry or no glyph
};

// Scores every unordered pair on both channels and keeps the "only similar"
// pairs: C_p holds pairs with graphemic similarity < tau_g, C_g pairs with
// phonetic similarity < tau_p.
ConfusionSets build_confusion_sets(std::span<const char32_t> chars, const PinyinTable& table,
                                   const GlyphAtlas& atlas, const ConfusionBuildOptions& opts = {});

struct TestPosition {
  std::size_t sentence = 0;
  std::size_t index = 0;
  bool operator==(const TestPosition&) const = default;
};

// Given sentences with one position replaced by MASK (the position is passed
// alongside), returns the predicted character per query or nullopt when the
// model emits a reserved id.
struct MaskedQuery {
  const std::u32string* sentence = nullptr;
  std::size_t position = 0;
};
using MaskedPredictor = std::function<std::vector<std::optional<char32_t>>(std::span<const MaskedQuery>)>;

// Masks every position of the first `limit` sentences one at a time and keeps
// those the predictor fails to restore.
std::vector<TestPosition> build_filter_set(std::span<const std::u32string> sentences, const MaskedPredictor& predictor,
                                           std::size_t limit, std::size_t batch_size = 64);

// Maps erroneous sentences to corrected ones; output i must correspond to input i.
using SentenceCorrector = std::function<std::vector<std::u32string>(std::span<const std::u32string>)>;

struct BinResult {
  int bin = 0;
  double lower = 0.0;
  std::size_t total = 0;    // T_r
  std::size_t correct = 0;  // C_r
  std::size_t skipped = 0;  // positions with no partner in this bin
  std::optional<double> accuracy;
};

struct Substitution {
  std::size_t sentence = 0;
  std::size_t position = 0;
  char32_t original = 0;
  char32_t replacement = 0;
  double similarity = 0.0;
  int bin = 0;
  bool restored = false;
};

struct MacuReport {
  ConfusionKind kind = ConfusionKind::phonetic;
  std::vector<BinResult> bins;  // one per bin, ascending lower bound
  std::vector<double> weights;  // per bin; 0 for empty bins
  double score = 0.0;
  std::size_t test_positions = 0;
  std::size_t skipped_positions = 0;
  std::vector<Substitution> substitutions;
};

struct MacuOptions {
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
};

// For every bin and every test position with original character c, picks a
// partner of c in that bin uniformly, substitutes it and asks the corrector to
// restore the sentence. A position counts as corrected only when the whole
// output equals the original sentence. The score weights the accuracies of
// the non-empty bins by their lower bounds.
MacuReport run_macu(std::span<const std::u32string> sentences, std::span<const TestPosition> positions,
                    const ConfusionSet& confusion, const SentenceCorrector& corrector, const MacuOptions& opts = {});

// w_i = phi_i / sum(phi); returns sum(a_i * w_i).
double macu_score(std::span<const double> accuracy, std::span<const double> phi);
std::vector<double> macu_weights(std::span<const double> phi);

inline double bin_accuracy(std::size_t correct, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

nlohmann::json to_json(const MacuReport& r);
// Per-bin CSV: bin,lower,total,correct,skipped,accuracy
std::string to_csv(const MacuReport& r);
// Structural check against the documented report layout; empty when valid.
std::vector<std::string> check_macu_report(const nlohmann::json& j);

}  // namespace nambert
