#include "nambert/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "nambert/error.hpp"
#include "nambert/rng.hpp"

namespace nambert {

ProbeResult run_probe(const nn::Tensor<double>& features, std::span<const int> labels,
                      std::span<const std::size_t> train_idx, std::span<const std::size_t> test_idx,
                      const ProbeOptions& opts) {
  if (features.rank() != 2) throw DimensionError("probe features must be [N, d], got " + nn::shape_str(features.shape()));
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (labels.size() != n) throw DimensionError("probe: labels and feature rows differ");
  for (auto i : train_idx)
    if (i >= n) throw InputError("probe: train index out of range");
  for (auto i : test_idx)
    if (i >= n) throw InputError("probe: test index out of range");
  if (train_idx.empty()) throw ConfigError("probe: empty training split");

  std::map<int, int> cls;
  for (auto i : train_idx) cls.emplace(labels[i], 0);
  if (cls.size() < 2) throw ConfigError("probe needs at least two classes in the training split");
  int next = 0;
  for (auto& [label, id] : cls) id = next++;
  const std::size_t k = cls.size();

  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (auto i : train_idx)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(train_idx.size());
  for (auto i : train_idx)
    for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(features.at(i, j) - mean[j], 2);
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(train_idx.size()));
    if (s < 1e-12) s = 1.0;
  }
  auto x = [&](std::size_t i, std::size_t j) { return (features.at(i, j) - mean[j]) / sd[j]; };

  // W [d, k], b [k]; Adam on the mean cross-entropy.
  std::vector<double> w(d * k, 0.0), b(k, 0.0), gw(d * k), gb(k);
  std::vector<double> mw(d * k, 0.0), vw(d * k, 0.0), mb(k, 0.0), vb(k, 0.0);
  SplitRng rng(opts.seed);
  for (auto& v : w) v = (rng.uniform() - 0.5) * 0.01;
  std::vector<double> logits(k);

  auto scores = [&](std::size_t i) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += x(i, j) * w[j * k + c];
      logits[c] = s;
    }
  };
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (auto i : train_idx) {
      scores(i);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      const int y = cls.at(labels[i]);
      for (std::size_t c = 0; c < k; ++c) {
        const double g = logits[c] / z - (static_cast<int>(c) == y ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t j = 0; j < d; ++j) gw[j * k + c] += g * x(i, j);
      }
    }
    const double inv = 1.0 / static_cast<double>(train_idx.size());
    const double c1 = 1 - std::pow(b1, epoch), c2 = 1 - std::pow(b2, epoch);
    auto adam = [&](std::vector<double>& p, std::vector<double>& g, std::vector<double>& m, std::vector<double>& v,
                    bool decay) {
      for (std::size_t q = 0; q < p.size(); ++q) {
        const double gq = g[q] * inv + (decay ? opts.l2 * p[q] : 0.0);
        m[q] = b1 * m[q] + (1 - b1) * gq;
        v[q] = b2 * v[q] + (1 - b2) * gq * gq;
        p[q] -= opts.lr * (m[q] / c1) / (std::sqrt(v[q] / c2) + eps);
      }
    };
    adam(w, gw, mw, vw, true);
    adam(b, gb, mb, vb, false);
  }

  auto accuracy = [&](std::span<const std::size_t> idx) {
    if (idx.empty()) return 0.0;
    std::size_t hit = 0;
    for (auto i : idx) {
      scores(i);
      const auto best = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      auto it = cls.find(labels[i]);
      hit += it != cls.end() && it->second == best;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
  };
  ProbeResult r;
  r.classes = static_cast<int>(k);
  r.train_size = train_idx.size();
  r.test_size = test_idx.size();
  r.train_accuracy = accuracy(train_idx);
  r.test_accuracy = accuracy(test_idx);
  return r;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> probe_split(std::size_t n, double test_fraction,
                                                                          std::uint64_t seed) {
  if (!(test_fraction >= 0 && test_fraction <= 1)) throw ConfigError("probe test fraction must be in [0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitRng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  return {train, test};
}

int pinyin_initial_class(const PinyinCode& code) { return code.codes[0] == 0 ? -1 : code.codes[0] - 1; }

std::vector<int> glyph_clusters(std::span<const GlyphBitmap> bitmaps, int k, std::uint64_t seed, int iters) {
  const std::size_t n = bitmaps.size();
  if (k < 1) throw ConfigError("cluster count must be >= 1");
  std::vector<int> assign(n, 0);
  if (n == 0) return assign;
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  auto dist = [](const std::array<float, kGlyphPixels>& a, const std::vector<double>& c) {
    double s = 0;
    for (std::size_t j = 0; j < kGlyphPixels; ++j) s += (a[j] - c[j]) * (a[j] - c[j]);
    return s;
  };
  SplitRng rng(seed);
  std::vector<std::vector<double>> centers;
  const auto& first = bitmaps[rng.index(n)].pixels;
  centers.emplace_back(first.begin(), first.end());
  std::vector<double> best(n);
  while (centers.size() < kk) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::max();
      for (const auto& c : centers) m = std::min(m, dist(bitmaps[i].pixels, c));
      best[i] = m;
      total += m;
    }
    std::size_t pick = n - 1;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if ((r -= best[i]) <= 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    centers.emplace_back(bitmaps[pick].pixels.begin(), bitmaps[pick].pixels.end());
  }
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int arg = 0;
      double m = std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < kk; ++c) {
        const double dd = dist(bitmaps[i].pixels, centers[c]);
        if (dd < m) {
          m = dd;
          arg = static_cast<int>(c);
        }
      }
      changed |= assign[i] != arg;
      assign[i] = arg;
    }
    if (!changed && it > 0) break;
    for (std::size_t c = 0; c < kk; ++c) {
      std::vector<double> sum(kGlyphPixels, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != static_cast<int>(c)) continue;
        ++cnt;
        for (std::size_t j = 0; j < kGlyphPixels; ++j) sum[j] += bitmaps[i].pixels[j];
      }
      if (!cnt) continue;
      for (auto& v : sum) v /= static_cast<double>(cnt);
      centers[c] = std::move(sum);
    }
  }
  return assign;
}

}  // namespace nambert
