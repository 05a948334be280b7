#include "nambert/confusion.hpp"

#include <algorithm>

#include "nambert/rng.hpp"

namespace nambert {

bool similarity_in_bin(double s, int bin) {
  const double lo = bin_lower(bin) - 1e-12;
  if (bin == kNumBins - 1) return s >= lo && s <= 1.0 + 1e-12;
  return s >= lo && s < bin_lower(bin + 1) - 1e-12;
}

std::string to_string(ConfusionKind k) { return k == ConfusionKind::phonetic ? "phonetic" : "graphemic"; }

ConfusionSet::ConfusionSet(ConfusionKind kind, std::vector<ConfusionPair> pairs) : kind_(kind), pairs_(std::move(pairs)) {
  for (auto& p : pairs_) {
    if (p.a > p.b) std::swap(p.a, p.b);
    p.bin = similarity_bin(p.similarity);
  }
  std::sort(pairs_.begin(), pairs_.end(), [](const ConfusionPair& x, const ConfusionPair& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  for (const auto& p : pairs_) {
    index_[p.a].push_back({p.b, p.similarity, p.bin});
    index_[p.b].push_back({p.a, p.similarity, p.bin});
  }
}

const std::vector<Partner>& ConfusionSet::partners(char32_t c) const {
  static const std::vector<Partner> kNone;
  auto it = index_.find(c);
  return it == index_.end() ? kNone : it->second;
}

std::vector<Partner> ConfusionSet::partners_in_bin(char32_t c, int bin) const {
  std::vector<Partner> out;
  for (const auto& p : partners(c))
    if (p.bin == bin) out.push_back(p);
  return out;
}

ConfusionSet ConfusionSet::filtered(double min_similarity) const {
  std::vector<ConfusionPair> kept;
  for (const auto& p : pairs_)
    if (p.similarity >= min_similarity) kept.push_back(p);
  return ConfusionSet(kind_, std::move(kept));
}

std::pair<ConfusionSet, ConfusionSet> ConfusionSet::split(double fraction, std::uint64_t seed) const {
  SplitRng rng(seed);
  std::vector<ConfusionPair> first, second;
  for (const auto& p : pairs_) (rng.bernoulli(fraction) ? second : first).push_back(p);
  return {ConfusionSet(kind_, std::move(first)), ConfusionSet(kind_, std::move(second))};
}

}  // namespace nambert
