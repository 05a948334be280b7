#pragma once

#include <cstdint>
#include <random>

namespace nambert {

// Draws that do not depend on the standard library's distribution
// implementations, so generated corpora are identical across toolchains.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  // Uniform in [0, n); n must be > 0.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace nambert
