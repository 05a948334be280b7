#pragma once

// Parallel corpora, label remapping, synthetic error generation and batching.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nambert/chardata.hpp"
#include "nambert/confusion.hpp"
#include "nambert/model.hpp"

namespace nambert {

struct Example {
  std::u32string source;
  std::u32string target;

  std::size_t errors() const;
};

struct ParallelCorpus {
  std::vector<Example> examples;
  std::size_t skipped = 0;  // lines whose sides differ in length (or are empty)
  std::vector<std::string> warnings;
};

// One "source<TAB>target" pair per line. Blank lines are ignored.
ParallelCorpus parse_parallel_text(std::string_view text);
ParallelCorpus parse_parallel(const std::filesystem::path& path);
void write_parallel(const std::filesystem::path& path, std::span<const Example> examples);

// One sentence per line; blank lines dropped.
std::vector<std::u32string> read_sentences(const std::filesystem::path& path);

// y'_i = KEEP where x_i == y_i, else y_i.
std::vector<int> remap_labels(std::span<const int> x_ids, std::span<const int> y_ids);

// Every position whose character has a partner in `confusion` is replaced with
// probability `rate` by a uniformly chosen partner. Targets are the original
// sentences.
std::vector<Example> synthesize_errors(std::span<const std::u32string> sentences, const ConfusionSet& confusion,
                                       double rate, std::uint64_t seed);

enum class Padding {
  to_max_seq,   // every row has max_seq positions
  to_longest,   // rows padded to the longest (truncated) example
};

struct Batch {
  ModelInput input;
  std::vector<int> labels;                   // [B * n]; PAD where masked
  std::vector<unsigned char> uncorrectable;  // per example: some target char is out of vocabulary
  std::vector<std::size_t> lengths;          // per example, after truncation

  std::size_t size() const { return input.batch; }
};

// Truncates to max_seq, pads with PAD. Inputs use the source characters; an
// OOV source character becomes UNK with its pinyin and a blank glyph. Labels
// are remapped; an OOV target character that differs from the source becomes
// UNK and flags the example as uncorrectable.
Batch make_batch(std::span<const Example> examples, const Vocab& vocab, const PinyinTable& table,
                 const GlyphAtlas& atlas, int max_seq, Padding padding = Padding::to_max_seq);

}  // namespace nambert
