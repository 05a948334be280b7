#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace nambert {

inline constexpr int kNumBins = 20;
inline constexpr double kBinWidth = 0.05;

// floor(s / 0.05), with s = 1 folded into the last bin.
inline int similarity_bin(double s) {
  int b = static_cast<int>(s * kNumBins + 1e-12);
  if (b < 0) b = 0;
  if (b >= kNumBins) b = kNumBins - 1;
  return b;
}
inline double bin_lower(int bin) { return bin * kBinWidth; }
// [lower, lower + 0.05), closed at 1 for the last bin.
bool similarity_in_bin(double s, int bin);

enum class ConfusionKind { phonetic, graphemic };
std::string to_string(ConfusionKind k);

struct ConfusionPair {
  char32_t a = 0;
  char32_t b = 0;
  double similarity = 0.0;
  int bin = 0;
};

struct Partner {
  char32_t other = 0;
  double similarity = 0.0;
  int bin = 0;
};

// Unordered character pairs ranked by similarity on one channel. Each pair
// can be used in both directions.
class ConfusionSet {
 public:
  ConfusionSet() = default;
  // Sorts pairs by descending similarity (ties by codepoints) and assigns bins.
  ConfusionSet(ConfusionKind kind, std::vector<ConfusionPair> pairs);

  ConfusionKind kind() const { return kind_; }
  const std::vector<ConfusionPair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  // Partners of c, in descending similarity.
  const std::vector<Partner>& partners(char32_t c) const;
  std::vector<Partner> partners_in_bin(char32_t c, int bin) const;

  // Pairs with similarity >= min_similarity.
  ConfusionSet filtered(double min_similarity) const;
  // Deterministic split of the pairs: roughly `fraction` of them go to the
  // second set.
  std::pair<ConfusionSet, ConfusionSet> split(double fraction, std::uint64_t seed) const;

 private:
  ConfusionKind kind_ = ConfusionKind::phonetic;
  std::vector<ConfusionPair> pairs_;
  std::unordered_map<char32_t, std::vector<Partner>> index_;
};

}  // namespace nambert
