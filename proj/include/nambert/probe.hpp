#pragma once

// Linear probe: multinomial logistic regression on frozen per-character
// features.

#include <cstdint>
#include <span>
#include <vector>

#include "nambert/chardata.hpp"
#include "nambert/tensor.hpp"

namespace nambert {

struct ProbeOptions {
  int epochs = 300;
  double lr = 0.05;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int classes = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

// features: [N, d]. Features are standardized with training-split statistics.
// Throws ConfigError when the labels hold fewer than two classes.
ProbeResult run_probe(const nn::Tensor<double>& features, std::span<const int> labels,
                      std::span<const std::size_t> train_idx, std::span<const std::size_t> test_idx,
                      const ProbeOptions& opts = {});

// Seeded shuffle of 0..n-1 cut at round(n * test_fraction).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> probe_split(std::size_t n, double test_fraction,
                                                                          std::uint64_t seed);

// Class of the first pinyin letter (0..25); -1 for a zero code.
int pinyin_initial_class(const PinyinCode& code);
// k-means (Lloyd, seeded k-means++ start) over bitmaps; returns a cluster per row.
std::vector<int> glyph_clusters(std::span<const GlyphBitmap> bitmaps, int k, std::uint64_t seed, int iters = 50);

}  // namespace nambert
