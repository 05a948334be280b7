#include "nambert/chardata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "nambert/error.hpp"
#include "nambert/log.hpp"
#include "nambert/utf8.hpp"

namespace nambert {

Vocab::Vocab(std::span<const char32_t> chars) {
  for (char32_t c : chars) {
    if (index_.count(c)) continue;
    index_.emplace(c, static_cast<int>(chars_.size()) + kNumReserved);
    chars_.push_back(c);
  }
}

std::optional<int> Vocab::find(char32_t c) const {
  auto it = index_.find(c);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id_or_unk(char32_t c) const {
  auto it = index_.find(c);
  return it == index_.end() ? kUnkId : it->second;
}

char32_t Vocab::char_at(int id) const {
  if (id < kNumReserved || id >= size()) {
    throw InputError("vocab id " + std::to_string(id) + " does not name a character");
  }
  return chars_[static_cast<std::size_t>(id - kNumReserved)];
}

Vocab build_vocab(std::span<const std::u32string> corpus) {
  std::vector<char32_t> chars;
  for (const auto& s : corpus) chars.insert(chars.end(), s.begin(), s.end());
  return Vocab(chars);
}

PinyinCode PinyinCode::from_reading(std::string_view reading) {
  std::string r(reading);
  // accept a literal u-umlaut as well as the ASCII v spelling
  for (std::string::size_type pos; (pos = r.find("\xC3\xBC")) != std::string::npos;) r.replace(pos, 2, "v");
  if (r.empty()) throw InputError("empty pinyin reading");
  if (r.size() > kPinyinLength) {
    throw InputError("pinyin reading '" + r + "' is longer than " + std::to_string(kPinyinLength) + " letters");
  }
  PinyinCode code;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const char ch = r[i];
    if (ch < 'a' || ch > 'z') throw InputError("pinyin reading '" + r + "' contains a non a..z letter");
    code.codes[i] = static_cast<std::uint8_t>(ch - 'a' + 1);
  }
  return code;
}

bool PinyinCode::is_zero() const {
  return std::all_of(codes.begin(), codes.end(), [](std::uint8_t v) { return v == 0; });
}

bool PinyinCode::valid() const {
  bool seen_zero = false;
  for (auto v : codes) {
    if (v > kPinyinAlphabet) return false;
    if (v == 0) seen_zero = true;
    else if (seen_zero) return false;
  }
  return true;
}

std::string PinyinCode::reading() const {
  std::string out;
  for (auto v : codes) {
    if (v == 0) break;
    out.push_back(static_cast<char>('a' + v - 1));
  }
  return out;
}

PinyinTable::PinyinTable(const PinyinTable& other)
    : warnings(other.warnings), entries_(other.entries_), order_(other.order_), misses_(other.misses_.load()) {}

PinyinTable& PinyinTable::operator=(const PinyinTable& other) {
  if (this != &other) {
    warnings = other.warnings;
    entries_ = other.entries_;
    order_ = other.order_;
    misses_.store(other.misses_.load());
  }
  return *this;
}

bool PinyinTable::insert(char32_t c, PinyinCode code) {
  if (!entries_.emplace(c, code).second) return false;
  order_.push_back(c);
  return true;
}

PinyinCode PinyinTable::code(char32_t c) const {
  auto it = entries_.find(c);
  if (it == entries_.end()) {
    misses_.fetch_add(1);
    return {};
  }
  return it->second;
}

namespace {

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

char32_t parse_char_field(std::string_view field, std::size_t line_no) {
  if (field.size() > 2 && (field.substr(0, 2) == "U+" || field.substr(0, 2) == "u+")) {
    unsigned long v = 0;
    try {
      std::size_t used = 0;
      v = std::stoul(std::string(field.substr(2)), &used, 16);
      if (used != field.size() - 2) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("bad codepoint '" + std::string(field) + "'", line_no);
    }
    if (v > 0x10FFFF) throw ParseError("codepoint out of range '" + std::string(field) + "'", line_no);
    return static_cast<char32_t>(v);
  }
  std::u32string decoded;
  try {
    decoded = utf8::decode(field);
  } catch (const InputError& e) {
    throw ParseError(e.what(), line_no);
  }
  if (decoded.size() != 1) throw ParseError("character field must hold exactly one character", line_no);
  return decoded[0];
}

}  // namespace

PinyinTable parse_pinyin_table(std::string_view text) {
  PinyinTable table;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    if (trim(line).empty() || trim(line).front() == '#') continue;

    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError("expected '<char>\\t<reading>'", line_no);
    const char32_t c = parse_char_field(trim(line.substr(0, tab)), line_no);
    const std::string_view reading = trim(line.substr(tab + 1));
    PinyinCode code;
    try {
      code = PinyinCode::from_reading(reading);
    } catch (const InputError& e) {
      throw ParseError(std::string("rejected reading: ") + e.what(), line_no);
    }
    if (!table.insert(c, code)) {
      std::string w = "line " + std::to_string(line_no) + ": duplicate entry for " + utf8::codepoint_label(c) +
                      ", keeping the first reading";
      log::warn(w);
      table.warnings.push_back(std::move(w));
    }
  }
  return table;
}

PinyinTable load_pinyin_table(const std::filesystem::path& path) { return parse_pinyin_table(read_file(path)); }

bool GlyphBitmap::is_zero() const {
  return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v == 0.0f; });
}

bool GlyphAtlas::insert(char32_t c, const GlyphBitmap& bitmap) {
  auto it = index_.find(c);
  if (it != index_.end()) {
    bitmaps_[it->second] = bitmap;
    return true;
  }
  index_.emplace(c, chars_.size());
  chars_.push_back(c);
  bitmaps_.push_back(bitmap);
  return false;
}

const GlyphBitmap& GlyphAtlas::bitmap(char32_t c) const {
  static const GlyphBitmap kBlank{};
  auto it = index_.find(c);
  return it == index_.end() ? kBlank : bitmaps_[it->second];
}

namespace {

std::uint32_t read_u32_le(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace

GlyphAtlas parse_glyphs(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::string(bytes.begin(), bytes.begin() + 4) != "GLY1") {
    throw FormatError("glyph file: bad magic (expected GLY1)");
  }
  const std::uint32_t count = read_u32_le(bytes, 4);
  constexpr std::size_t kRecord = 4 + kGlyphPixels;
  if (bytes.size() < 8 + static_cast<std::size_t>(count) * kRecord) {
    throw FormatError("glyph file: truncated, header announces " + std::to_string(count) + " records");
  }
  GlyphAtlas atlas;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::size_t off = 8 + static_cast<std::size_t>(r) * kRecord;
    const auto cp = static_cast<char32_t>(read_u32_le(bytes, off));
    GlyphBitmap bmp;
    for (std::size_t i = 0; i < kGlyphPixels; ++i) bmp.pixels[i] = static_cast<float>(bytes[off + 4 + i]) / 255.0f;
    if (atlas.insert(cp, bmp)) {
      std::string w = "glyph record " + std::to_string(r) + ": duplicate " + utf8::codepoint_label(cp) +
                      ", later record wins";
      log::warn(w);
      atlas.warnings.push_back(std::move(w));
    }
  }
  if (bytes.size() != 8 + static_cast<std::size_t>(count) * kRecord) {
    std::string w = "glyph file: trailing bytes after " + std::to_string(count) + " records ignored";
    log::warn(w);
    atlas.warnings.push_back(std::move(w));
  }
  return atlas;
}

GlyphAtlas load_glyphs(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  return parse_glyphs(bytes);
}

std::vector<std::uint8_t> serialize_glyphs(const GlyphAtlas& atlas) {
  std::vector<std::uint8_t> out{'G', 'L', 'Y', '1'};
  put_u32_le(out, static_cast<std::uint32_t>(atlas.size()));
  for (char32_t c : atlas.chars()) {
    put_u32_le(out, static_cast<std::uint32_t>(c));
    for (float v : atlas.bitmap(c).pixels) {
      const float clamped = std::clamp(v, 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0f)));
    }
  }
  return out;
}

void write_glyphs(const GlyphAtlas& atlas, const std::filesystem::path& path) {
  const auto bytes = serialize_glyphs(atlas);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace nambert
