#pragma once

// Per-character resources: vocabulary with reserved ids, toneless pinyin
// codes and 32x32 glyph bitmaps.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace nambert {

inline constexpr int kPadId = 0;
inline constexpr int kKeepId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kNumReserved = 4;

inline constexpr bool is_reserved_id(int id) { return id >= 0 && id < kNumReserved; }

class Vocab {
 public:
  Vocab() = default;
  // Characters get ids kNumReserved, kNumReserved + 1, ... in the given order.
  // Duplicates are ignored.
  explicit Vocab(std::span<const char32_t> chars);

  int size() const { return static_cast<int>(chars_.size()) + kNumReserved; }
  std::optional<int> find(char32_t c) const;
  // Out-of-vocabulary characters map to kUnkId.
  int id_or_unk(char32_t c) const;
  // Throws InputError for reserved or out-of-range ids.
  char32_t char_at(int id) const;
  bool contains(char32_t c) const { return index_.count(c) != 0; }
  const std::vector<char32_t>& chars() const { return chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> index_;
};

Vocab build_vocab(std::span<const std::u32string> corpus);

inline constexpr std::size_t kPinyinLength = 6;
inline constexpr int kPinyinAlphabet = 26;

// Toneless pinyin as letter indices a..z -> 1..26, zero padded to 6 slots.
struct PinyinCode {
  std::array<std::uint8_t, kPinyinLength> codes{};

  // Throws InputError unless the reading is 1..6 letters of a..z (u-umlaut as v).
  static PinyinCode from_reading(std::string_view reading);
  bool is_zero() const;
  // No nonzero entry after the first zero, every entry <= 26.
  bool valid() const;
  std::string reading() const;
  bool operator==(const PinyinCode&) const = default;
};

class PinyinTable {
 public:
  PinyinTable() = default;
  PinyinTable(const PinyinTable& other);
  PinyinTable& operator=(const PinyinTable& other);

  // Returns false (and leaves the table unchanged) when c already has a code.
  bool insert(char32_t c, PinyinCode code);
  // Hit returns the stored code; a miss returns the all-zero code and is counted.
  PinyinCode code(char32_t c) const;
  bool contains(char32_t c) const { return entries_.count(c) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t misses() const { return misses_.load(); }
  const std::vector<char32_t>& chars() const { return order_; }

  std::vector<std::string> warnings;

 private:
  std::unordered_map<char32_t, PinyinCode> entries_;
  std::vector<char32_t> order_;
  mutable std::atomic<std::size_t> misses_{0};
};

inline PinyinCode pinyin_code(char32_t c, const PinyinTable& table) { return table.code(c); }

// Lines are "U+XXXX<TAB>reading" or "<char><TAB>reading"; '#' comments and
// blank lines are skipped. The first reading of a duplicated character wins.
PinyinTable parse_pinyin_table(std::string_view text);
PinyinTable load_pinyin_table(const std::filesystem::path& path);

inline constexpr int kGlyphSide = 32;
inline constexpr std::size_t kGlyphPixels = 1024;

struct GlyphBitmap {
  std::array<float, kGlyphPixels> pixels{};

  bool is_zero() const;
  bool operator==(const GlyphBitmap&) const = default;
};

class GlyphAtlas {
 public:
  // Later records win; returns true when an existing entry was replaced.
  bool insert(char32_t c, const GlyphBitmap& bitmap);
  // Unknown characters yield the all-zero bitmap.
  const GlyphBitmap& bitmap(char32_t c) const;
  bool contains(char32_t c) const { return index_.count(c) != 0; }
  std::size_t size() const { return chars_.size(); }
  const std::vector<char32_t>& chars() const { return chars_; }

  std::vector<std::string> warnings;

 private:
  std::vector<char32_t> chars_;
  std::vector<GlyphBitmap> bitmaps_;
  std::unordered_map<char32_t, std::size_t> index_;
};

// GLY1: magic "GLY1", u32 LE count, then count x (u32 LE codepoint, 1024 bytes).
GlyphAtlas parse_glyphs(std::span<const std::uint8_t> bytes);
GlyphAtlas load_glyphs(const std::filesystem::path& path);
// Pixels are quantized to round(v * 255).
std::vector<std::uint8_t> serialize_glyphs(const GlyphAtlas& atlas);
void write_glyphs(const GlyphAtlas& atlas, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

}  // namespace nambert
