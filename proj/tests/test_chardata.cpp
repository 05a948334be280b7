#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "nambert/chardata.hpp"
#include "nambert/error.hpp"
#include "test_util.hpp"

using namespace nambert;
using testutil::u32;

namespace {

using Code = std::array<std::uint8_t, 6>;

std::vector<std::uint8_t> gly1_header(std::uint32_t count) {
  std::vector<std::uint8_t> b{'G', 'L', 'Y', '1'};
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
  return b;
}

void append_record(std::vector<std::uint8_t>& b, char32_t cp, const std::vector<std::uint8_t>& pixels) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(static_cast<std::uint32_t>(cp) >> (8 * i)));
  b.insert(b.end(), pixels.begin(), pixels.end());
}

}  // namespace

TEST_CASE("pinyin readings map letters to 1..26") {
  const auto t = parse_pinyin_table("马\tma\nU+88C5\tzhuang\n");
  CHECK(t.code(U'马').codes == Code{13, 1, 0, 0, 0, 0});
  CHECK(t.code(U'装').codes == Code{26, 8, 21, 1, 14, 7});
  CHECK(t.code(U'装').reading() == "zhuang");
  CHECK(PinyinCode::from_reading("lv").codes == Code{12, 22, 0, 0, 0, 0});
}

TEST_CASE("pinyin table edge cases") {
  SUBCASE("empty file") {
    const auto t = parse_pinyin_table("");
    CHECK(t.size() == 0);
    CHECK(t.warnings.empty());
  }
  SUBCASE("misses yield the zero code and are counted") {
    const auto t = parse_pinyin_table("马\tma\n");
    CHECK(t.code(U'，').is_zero());
    CHECK(t.code(U'龘').is_zero());
    CHECK(t.misses() == 2);
    CHECK(!t.code(U'马').is_zero());
    CHECK(t.misses() == 2);
  }
  SUBCASE("duplicate keeps the first reading with a warning") {
    const auto t = parse_pinyin_table("# comment\n\n长\tchang\n长\tzhang\n");
    CHECK(t.code(U'长').reading() == "chang");
    CHECK(t.warnings.size() == 1);
  }
  SUBCASE("malformed lines report their line number") {
    try {
      parse_pinyin_table("马\tma\nno tab here\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    try {
      parse_pinyin_table("马\tma\n\n装\tzhuangg\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_pinyin_table("马\tm4\n"), ParseError);
    CHECK_THROWS_AS(parse_pinyin_table("U+ZZZZ\tma\n"), ParseError);
  }
}

TEST_CASE("bundled pinyin table satisfies the padding invariant") {
  const auto t = load_pinyin_table(testutil::toy_dir() / "pinyin.tsv");
  CHECK(t.size() > 100);
  for (char32_t c : t.chars()) {
    const auto code = t.code(c);
    CHECK(code.valid());
    CHECK(!code.is_zero());
  }
}

TEST_CASE("glyph atlas parsing") {
  SUBCASE("empty atlas") {
    const auto b = gly1_header(0);
    CHECK(parse_glyphs(b).size() == 0);
  }
  SUBCASE("byte scaling") {
    auto b = gly1_header(2);
    std::vector<std::uint8_t> px(1024, 0);
    px[1] = 128;
    px[2] = 255;
    append_record(b, U'马', px);
    append_record(b, U'妈', std::vector<std::uint8_t>(1024, 255));
    const auto a = parse_glyphs(b);
    REQUIRE(a.size() == 2);
    const auto& m = a.bitmap(U'马').pixels;
    CHECK(m[0] == 0.0f);
    CHECK(m[1] == doctest::Approx(128.0 / 255.0));
    CHECK(m[2] == 1.0f);
    for (float v : a.bitmap(U'妈').pixels) CHECK(v == 1.0f);
    CHECK(a.bitmap(U'码').is_zero());
  }
  SUBCASE("duplicate codepoint: later record wins") {
    auto b = gly1_header(2);
    append_record(b, U'马', std::vector<std::uint8_t>(1024, 0));
    append_record(b, U'马', std::vector<std::uint8_t>(1024, 255));
    const auto a = parse_glyphs(b);
    CHECK(a.size() == 1);
    CHECK(a.bitmap(U'马').pixels[0] == 1.0f);
    CHECK(a.warnings.size() == 1);
  }
  SUBCASE("bad magic and truncation") {
    auto b = gly1_header(1);
    append_record(b, U'马', std::vector<std::uint8_t>(1024, 7));
    auto bad = b;
    bad[3] = '2';
    CHECK_THROWS_AS(parse_glyphs(bad), FormatError);
    b.pop_back();
    CHECK_THROWS_AS(parse_glyphs(b), FormatError);
    CHECK_THROWS_AS(parse_glyphs(std::vector<std::uint8_t>{'G', 'L'}), FormatError);
  }
}

TEST_CASE("glyph round trip stays within one quantization step") {
  GlyphAtlas a;
  GlyphBitmap g;
  for (std::size_t i = 0; i < kGlyphPixels; ++i) g.pixels[i] = static_cast<float>((i * 37 % 1001) / 1000.0);
  a.insert(U'中', g);
  a.insert(U'国', testutil::block_glyph(3));
  const auto dir = testutil::temp_dir("glyphs");
  write_glyphs(a, dir / "a.gly1");
  const auto back = load_glyphs(dir / "a.gly1");
  REQUIRE(back.size() == 2);
  for (char32_t c : a.chars())
    for (std::size_t i = 0; i < kGlyphPixels; ++i)
      CHECK(std::abs(back.bitmap(c).pixels[i] - a.bitmap(c).pixels[i]) <= 1.0f / 255.0f);
}

TEST_CASE("vocabulary ids") {
  SUBCASE("two characters") {
    const std::vector<std::u32string> corpus{u32("我爱")};
    const auto v = build_vocab(corpus);
    CHECK(v.size() == 6);
    CHECK(v.find(U'我') == 4);
    CHECK(v.find(U'爱') == 5);
  }
  SUBCASE("empty corpus") {
    CHECK(build_vocab(std::vector<std::u32string>{}).size() == kNumReserved);
  }
  SUBCASE("repeats appear once in first-occurrence order") {
    const std::vector<std::u32string> corpus{u32("中国中"), u32("国人中")};
    const auto v = build_vocab(corpus);
    CHECK(std::u32string(v.chars().begin(), v.chars().end()) == u32("中国人"));
  }
  SUBCASE("id round trip and reserved ids") {
    const std::vector<std::u32string> corpus{u32("今天天气很好"), u32("我们去公园散步")};
    const auto v = build_vocab(corpus);
    for (char32_t c : v.chars()) {
      const int id = v.id_or_unk(c);
      CHECK(id >= kNumReserved);
      CHECK(v.char_at(id) == c);
    }
    for (int id = 0; id < kNumReserved; ++id) CHECK_THROWS_AS(v.char_at(id), InputError);
    CHECK_THROWS_AS(v.char_at(v.size()), InputError);
    CHECK(v.id_or_unk(U'龘') == kUnkId);
  }
}

TEST_CASE("atlas written by the font generator loads within one quantization step") {
  const std::filesystem::path font = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";
  const auto script = testutil::source_dir() / "tools" / "render_glyphs.py";
  if (!std::filesystem::exists(font) || std::system("python3 -c 'import PIL' >/dev/null 2>&1") != 0) {
    MESSAGE("skipped: needs python3 with Pillow and the DejaVu font");
    return;
  }
  const auto dir = testutil::temp_dir("render");
  const std::string cmd = "python3 '" + script.string() + "' --font '" + font.string() +
                          "' --chars 'ABQx' --out '" + (dir / "r.gly1").string() + "' >/dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  const auto raw = read_binary_file(dir / "r.gly1");
  const auto atlas = load_glyphs(dir / "r.gly1");
  REQUIRE(atlas.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) {
    const std::size_t off = 8 + r * 1028;
    const char32_t cp = raw[off] | (raw[off + 1] << 8) | (raw[off + 2] << 16) | (static_cast<char32_t>(raw[off + 3]) << 24);
    CHECK(cp == U"ABQx"[r]);
    const auto& px = atlas.bitmap(cp).pixels;
    CHECK(!atlas.bitmap(cp).is_zero());
    for (std::size_t k = 0; k < kGlyphPixels; ++k) CHECK(std::abs(px[k] - raw[off + 4 + k] / 255.0f) <= 1.0f / 255.0f);
  }
  write_glyphs(atlas, dir / "again.gly1");
  CHECK(read_binary_file(dir / "again.gly1") == raw);
}
