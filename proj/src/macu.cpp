#include "nambert/macu.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nambert/error.hpp"
#include "nambert/rng.hpp"
#include "nambert/utf8.hpp"

namespace nambert {

double char_similarity(std::span<const double> fx, std::span<const double> fy) {
  if (fx.size() != fy.size()) {
    throw DimensionError("similarity: feature sizes " + std::to_string(fx.size()) + " and " +
                         std::to_string(fy.size()) + " differ");
  }
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    dot += fx[i] * fy[i];
    nx += fx[i] * fx[i];
    ny += fy[i] * fy[i];
  }
  if (nx == 0.0 || ny == 0.0) throw InputError("similarity is undefined for a zero feature vector");
  const double cos = std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
  return (1.0 + cos) / 2.0;
}

std::vector<double> phonetic_features(const PinyinCode& code) {
  std::vector<double> f(kPinyinLength * (kPinyinAlphabet + 1), 0.0);
  for (std::size_t k = 0; k < kPinyinLength; ++k) f[k * (kPinyinAlphabet + 1) + code.codes[k]] = 1.0;
  return f;
}

std::vector<double> glyph_features(const GlyphBitmap& bitmap) {
  return {bitmap.pixels.begin(), bitmap.pixels.end()};
}

namespace {

std::vector<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

double unit_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return (1.0 + std::clamp(dot, -1.0, 1.0)) / 2.0;
}

}  // namespace

ConfusionSets build_confusion_sets(std::span<const char32_t> chars, const PinyinTable& table,
                                   const GlyphAtlas& atlas, const ConfusionBuildOptions& opts) {
  ConfusionSets out;
  std::vector<char32_t> kept;
  std::vector<std::vector<double>> ph, gl;
  std::vector<char32_t> seen;
  for (char32_t c : chars) {
    if (std::find(seen.begin(), seen.end(), c) != seen.end()) continue;
    seen.push_back(c);
    if (!table.contains(c) || !atlas.contains(c) || atlas.bitmap(c).is_zero()) {
      out.skipped_chars.push_back(c);
      continue;
    }
    kept.push_back(c);
    ph.push_back(unit(phonetic_features(table.code(c))));
    gl.push_back(unit(glyph_features(atlas.bitmap(c))));
  }
  std::vector<ConfusionPair> cp, cg;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      const double sp = unit_similarity(ph[i], ph[j]);
      const double sg = unit_similarity(gl[i], gl[j]);
      if (sg < opts.tau_g) cp.push_back({kept[i], kept[j], sp, 0});
      if (sp < opts.tau_p) cg.push_back({kept[i], kept[j], sg, 0});
    }
  }
  out.phonetic = ConfusionSet(ConfusionKind::phonetic, std::move(cp));
  out.graphemic = ConfusionSet(ConfusionKind::graphemic, std::move(cg));
  return out;
}

std::vector<TestPosition> build_filter_set(std::span<const std::u32string> sentences, const MaskedPredictor& predictor,
                                           std::size_t limit, std::size_t batch_size) {
  if (batch_size == 0) batch_size = 1;
  limit = std::min(limit, sentences.size());
  std::vector<TestPosition> all;
  for (std::size_t s = 0; s < limit; ++s)
    for (std::size_t i = 0; i < sentences[s].size(); ++i) all.push_back({s, i});
  std::vector<TestPosition> kept;
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    const std::size_t end = std::min(all.size(), start + batch_size);
    std::vector<MaskedQuery> queries;
    for (std::size_t k = start; k < end; ++k) queries.push_back({&sentences[all[k].sentence], all[k].index});
    const auto preds = predictor(queries);
    if (preds.size() != queries.size()) throw ContractError("masked predictor returned the wrong number of answers");
    for (std::size_t k = start; k < end; ++k) {
      const auto& pred = preds[k - start];
      if (!pred || *pred != sentences[all[k].sentence][all[k].index]) kept.push_back(all[k]);
    }
  }
  return kept;
}

std::vector<double> macu_weights(std::span<const double> phi) {
  double total = 0;
  for (double p : phi) {
    if (p < 0) throw InputError("interval lower bounds must be >= 0");
    total += p;
  }
  if (total == 0.0) throw NumericError("all interval lower bounds are zero; weights are undefined");
  std::vector<double> w(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) w[i] = phi[i] / total;
  return w;
}

double macu_score(std::span<const double> accuracy, std::span<const double> phi) {
  if (accuracy.size() != phi.size()) {
    throw DimensionError("macu_score: " + std::to_string(accuracy.size()) + " accuracies vs " +
                         std::to_string(phi.size()) + " bounds");
  }
  const auto w = macu_weights(phi);
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += accuracy[i] * w[i];
  return s;
}

MacuReport run_macu(std::span<const std::u32string> sentences, std::span<const TestPosition> positions,
                    const ConfusionSet& confusion, const SentenceCorrector& corrector, const MacuOptions& opts) {
  if (positions.empty()) throw ProtocolError("MACU test set is empty");
  MacuReport report;
  report.kind = confusion.kind();
  report.test_positions = positions.size();
  const std::size_t batch_size = std::max<std::size_t>(1, opts.batch_size);

  for (int bin = 0; bin < kNumBins; ++bin) {
    BinResult br;
    br.bin = bin;
    br.lower = bin_lower(bin);
    // each bin draws from its own stream
    SplitRng rng(opts.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(bin + 1)));
    std::vector<Substitution> subs;
    std::vector<std::u32string> inputs;
    for (const auto& pos : positions) {
      if (pos.sentence >= sentences.size() || pos.index >= sentences[pos.sentence].size()) {
        throw InputError("MACU test position out of range");
      }
      const char32_t c = sentences[pos.sentence][pos.index];
      const auto cands = confusion.partners_in_bin(c, bin);
      if (cands.empty()) {
        ++br.skipped;
        continue;
      }
      const Partner& pick = cands[rng.index(cands.size())];
      subs.push_back({pos.sentence, pos.index, c, pick.other, pick.similarity, bin, false});
      std::u32string s = sentences[pos.sentence];
      s[pos.index] = pick.other;
      inputs.push_back(std::move(s));
    }
    for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
      const std::size_t end = std::min(inputs.size(), start + batch_size);
      const auto outputs = corrector(std::span<const std::u32string>(inputs).subspan(start, end - start));
      if (outputs.size() != end - start) throw ContractError("corrector returned the wrong number of sentences");
      for (std::size_t k = start; k < end; ++k) {
        subs[k].restored = outputs[k - start] == sentences[subs[k].sentence];
        br.correct += subs[k].restored;
      }
    }
    br.total = subs.size();
    if (br.total) br.accuracy = bin_accuracy(br.correct, br.total);
    report.skipped_positions += br.skipped;
    report.substitutions.insert(report.substitutions.end(), subs.begin(), subs.end());
    report.bins.push_back(br);
  }
  if (report.substitutions.empty()) {
    throw ProtocolError("no test position has a confusion partner in any similarity bin");
  }
  std::vector<double> acc, phi;
  for (const auto& b : report.bins) {
    if (!b.total) continue;
    acc.push_back(*b.accuracy);
    phi.push_back(b.lower);
  }
  report.score = macu_score(acc, phi);
  const auto w = macu_weights(phi);
  report.weights.assign(kNumBins, 0.0);
  std::size_t k = 0;
  for (const auto& b : report.bins)
    if (b.total) report.weights[static_cast<std::size_t>(b.bin)] = w[k++];
  return report;
}

nlohmann::json to_json(const MacuReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"bin", b.bin},
                    {"lower", b.lower},
                    {"total", b.total},
                    {"correct", b.correct},
                    {"skipped", b.skipped},
                    {"accuracy", b.accuracy ? nlohmann::json(*b.accuracy) : nlohmann::json(nullptr)},
                    {"weight", r.weights.empty() ? 0.0 : r.weights[static_cast<std::size_t>(b.bin)]}});
  }
  return {{"kind", to_string(r.kind)},
          {"bins", bins},
          {"score", r.score},
          {"test_positions", r.test_positions},
          {"skipped_positions", r.skipped_positions},
          {"substitutions", r.substitutions.size()}};
}

std::string to_csv(const MacuReport& r) {
  std::ostringstream ss;
  ss << "bin,lower,total,correct,skipped,accuracy\n";
  for (const auto& b : r.bins) {
    ss << b.bin << ',' << b.lower << ',' << b.total << ',' << b.correct << ',' << b.skipped << ',';
    if (b.accuracy) ss << *b.accuracy;
    ss << '\n';
  }
  return ss.str();
}

std::vector<std::string> check_macu_report(const nlohmann::json& j) {
  std::vector<std::string> errs;
  auto need = [&](const nlohmann::json& obj, const char* key, auto pred, const char* what) {
    if (!obj.is_object() || !obj.contains(key)) {
      errs.push_back(std::string("missing '") + key + "'");
      return false;
    }
    if (!pred(obj.at(key))) {
      errs.push_back(std::string("'") + key + "' must be " + what);
      return false;
    }
    return true;
  };
  auto is_count = [](const nlohmann::json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); };
  // weighted sums may overshoot 1 by rounding
  auto is_unit = [](const nlohmann::json& v) {
    return v.is_number() && v.get<double>() >= -1e-9 && v.get<double>() <= 1 + 1e-9;
  };
  if (!j.is_object()) return {"report must be an object"};
  need(j, "kind", [](const nlohmann::json& v) { return v.is_string() && (v == "phonetic" || v == "graphemic"); },
       "\"phonetic\" or \"graphemic\"");
  need(j, "score", is_unit, "a number in [0, 1]");
  need(j, "test_positions", is_count, "a non-negative integer");
  need(j, "skipped_positions", is_count, "a non-negative integer");
  need(j, "substitutions", is_count, "a non-negative integer");
  if (need(j, "bins", [](const nlohmann::json& v) { return v.is_array() && v.size() == kNumBins; },
           "an array of 20 bins")) {
    double wsum = 0;
    for (const auto& b : j.at("bins")) {
      need(b, "bin", is_count, "a non-negative integer");
      need(b, "lower", is_unit, "a number in [0, 1]");
      need(b, "total", is_count, "a non-negative integer");
      need(b, "correct", is_count, "a non-negative integer");
      need(b, "skipped", is_count, "a non-negative integer");
      need(b, "accuracy", [&](const nlohmann::json& v) { return v.is_null() || is_unit(v); }, "null or in [0, 1]");
      if (need(b, "weight", is_unit, "a number in [0, 1]")) wsum += b.at("weight").get<double>();
      if (b.is_object() && b.contains("total") && b.contains("correct") && is_count(b["total"]) && is_count(b["correct"]) &&
          b["correct"].get<long long>() > b["total"].get<long long>()) {
        errs.push_back("bin has more corrections than substitutions");
      }
    }
    if (std::abs(wsum - 1.0) > 1e-9) errs.push_back("bin weights must sum to 1");
  }
  return errs;
}

}  // namespace nambert
