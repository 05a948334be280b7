#include "nambert/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "nambert/error.hpp"
#include "nambert/log.hpp"
#include "nambert/rng.hpp"
#include "nambert/utf8.hpp"

namespace nambert {

std::size_t Example::errors() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < std::min(source.size(), target.size()); ++i) n += source[i] != target[i];
  return n;
}

namespace {

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line_no == 1 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    f(line, line_no);
    start = end + 1;
  }
}

}  // namespace

ParallelCorpus parse_parallel_text(std::string_view text) {
  ParallelCorpus corpus;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    auto skip = [&](const std::string& why) {
      ++corpus.skipped;
      std::string w = "line " + std::to_string(line_no) + ": " + why + ", skipped";
      log::warn(w);
      corpus.warnings.push_back(std::move(w));
    };
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) return skip("no tab separator");
    Example ex;
    try {
      ex.source = utf8::decode(line.substr(0, tab));
      ex.target = utf8::decode(line.substr(tab + 1));
    } catch (const InputError& e) {
      return skip(e.what());
    }
    if (ex.source.empty() || ex.target.empty()) return skip("empty side");
    if (ex.source.size() != ex.target.size()) {
      return skip("source has " + std::to_string(ex.source.size()) + " characters, target " +
                  std::to_string(ex.target.size()));
    }
    corpus.examples.push_back(std::move(ex));
  });
  return corpus;
}

ParallelCorpus parse_parallel(const std::filesystem::path& path) { return parse_parallel_text(read_file(path)); }

void write_parallel(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& ex : examples) out << utf8::encode(ex.source) << '\t' << utf8::encode(ex.target) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::u32string> read_sentences(const std::filesystem::path& path) {
  std::vector<std::u32string> out;
  const std::string text = read_file(path);
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    try {
      out.push_back(utf8::decode(line));
    } catch (const InputError& e) {
      throw ParseError(e.what(), line_no);
    }
  });
  return out;
}

std::vector<int> remap_labels(std::span<const int> x_ids, std::span<const int> y_ids) {
  if (x_ids.size() != y_ids.size()) {
    throw InputError("remap_labels: " + std::to_string(x_ids.size()) + " source ids vs " +
                     std::to_string(y_ids.size()) + " target ids");
  }
  std::vector<int> out(y_ids.begin(), y_ids.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (x_ids[i] == y_ids[i]) out[i] = kKeepId;
  return out;
}

std::vector<Example> synthesize_errors(std::span<const std::u32string> sentences, const ConfusionSet& confusion,
                                       double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("confusion rate must lie in [0, 1]");
  SplitRng rng(seed);
  std::vector<Example> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    Example ex{s, s};
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& partners = confusion.partners(s[i]);
      if (partners.empty()) continue;
      // always draw so the stream does not depend on the rate
      const bool replace = rng.bernoulli(rate);
      const std::size_t pick = rng.index(partners.size());
      if (replace) ex.source[i] = partners[pick].other;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Batch make_batch(std::span<const Example> examples, const Vocab& vocab, const PinyinTable& table,
                 const GlyphAtlas& atlas, int max_seq, Padding padding) {
  if (max_seq <= 0) throw ConfigError("max_seq must be positive");
  Batch batch;
  std::size_t seq = padding == Padding::to_max_seq ? static_cast<std::size_t>(max_seq) : 0;
  for (const auto& ex : examples) {
    if (ex.source.size() != ex.target.size()) throw InputError("make_batch: example sides differ in length");
    batch.lengths.push_back(std::min(ex.source.size(), static_cast<std::size_t>(max_seq)));
    if (padding == Padding::to_longest) seq = std::max(seq, batch.lengths.back());
  }
  if (examples.empty()) seq = 0;
  auto& in = batch.input;
  in.batch = examples.size();
  in.seq = seq;
  const std::size_t n = in.positions();
  in.ids.assign(n, kPadId);
  in.pinyin.assign(n * kPinyinLength, 0.0f);
  in.glyph_index.assign(n, 0);
  in.mask.assign(n, 0);
  batch.labels.assign(n, kPadId);
  batch.uncorrectable.assign(examples.size(), 0);

  // Row 0 is the blank bitmap used by padding and characters without a glyph.
  std::map<char32_t, int> glyph_rows;
  in.glyph_table.assign(kGlyphPixels, 0.0f);
  auto glyph_row = [&](char32_t c) {
    if (!atlas.contains(c)) return 0;
    auto [it, fresh] = glyph_rows.emplace(c, static_cast<int>(in.glyph_table.size() / kGlyphPixels));
    if (fresh) {
      const auto& px = atlas.bitmap(c).pixels;
      in.glyph_table.insert(in.glyph_table.end(), px.begin(), px.end());
    }
    return it->second;
  };

  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& ex = examples[b];
    for (std::size_t i = 0; i < batch.lengths[b]; ++i) {
      const std::size_t pos = b * seq + i;
      const char32_t x = ex.source[i], y = ex.target[i];
      in.ids[pos] = vocab.id_or_unk(x);
      in.mask[pos] = 1;
      const auto code = table.code(x);
      for (std::size_t k = 0; k < kPinyinLength; ++k) in.pinyin[pos * kPinyinLength + k] = code.codes[k];
      // out-of-vocabulary characters reach the model through pinyin alone
      in.glyph_index[pos] = vocab.contains(x) ? glyph_row(x) : 0;
      if (x == y) {
        batch.labels[pos] = kKeepId;
      } else {
        batch.labels[pos] = vocab.id_or_unk(y);
        if (batch.labels[pos] == kUnkId) batch.uncorrectable[b] = 1;
      }
    }
  }
  return batch;
}

}  // namespace nambert
