#include <doctest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "nambert/trainer.hpp"
#include "test_util.hpp"

using namespace nambert;
using namespace nambert::nn;
using testutil::u32;

namespace {

struct Toy {
  PinyinTable table = load_pinyin_table(testutil::toy_dir() / "pinyin.tsv");
  GlyphAtlas atlas = load_glyphs(testutil::toy_dir() / "glyphs.gly1");
  std::vector<std::u32string> clean = read_sentences(testutil::toy_dir() / "clean_train.txt");
};

const Toy& toy() {
  static const Toy t;
  return t;
}

ModelConfig small_config(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_s = 32;
  c.d_g = 16;
  c.layers = 1;
  c.heads = 2;
  c.max_seq = 32;
  c.ffn_mult = 2;
  c.glyph_hidden = {64, 32};
  return c;
}

// Corrupts one character per sentence by swapping it with a neighbour in the sentence list.
std::vector<Example> tiny_corpus(std::size_t n) {
  const auto& clean = toy().clean;
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = clean[i];
    auto s = t;
    const auto& other = clean[(i + 1) % clean.size()];
    s[i % s.size()] = other[0];
    out.push_back({s, t});
  }
  return out;
}

Vocab vocab_of(std::span<const Example> ex) {
  std::vector<std::u32string> all;
  for (const auto& e : ex) {
    all.push_back(e.source);
    all.push_back(e.target);
  }
  return build_vocab(all);
}

template <typename T>
bool same_params(const ParamStore<T>& a, const ParamStore<T>& b, const std::string& prefix = "") {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name.starts_with(prefix) && a[i].value != b[i].value) return false;
  return true;
}

}  // namespace

TEST_CASE("ablation flags") {
  ModelConfig m;
  TrainConfig t;
  Ablation a;
  a.front_fusion = a.align = true;
  CHECK_THROWS_AS(apply_ablation(a, m, t), ConfigError);
  a = {};
  a.no_focal = true;
  a.no_multimodal = true;
  a.align = true;
  apply_ablation(a, m, t);
  CHECK(!t.focal);
  CHECK(!m.multimodal);
  CHECK(m.fusion == FusionMode::align);
  const auto w = loss_weights(m, false);
  CHECK(w.gamma == 0.0);
  CHECK(w.alpha_keep == 1.0);
  CHECK(w.alpha_other == 1.0);
}

TEST_CASE("focal-off loss equals cross-entropy of the batch") {
  const auto ex = tiny_corpus(8);
  const auto v = vocab_of(ex);
  auto cfg = small_config(v.size());
  NamBert<double> m(cfg, 3);
  const auto b = make_batch(ex, v, toy().table, toy().atlas, cfg.max_seq, Padding::to_longest);
  Graph<double> g;
  const double loss = g.value(batch_loss(g, m, b, loss_weights(cfg, false)))[0];

  const auto p = m.forward(b.input);
  const std::size_t vs = p.last_dim();
  double ce = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    if (b.labels[i] == kPadId || b.labels[i] == kUnkId) continue;
    ce -= std::log(p[i * vs + static_cast<std::size_t>(b.labels[i])]);
    ++count;
  }
  CHECK(std::abs(loss - ce / static_cast<double>(count)) < 1e-6);
}

TEST_CASE("multimodal-off output ignores pinyin and glyphs") {
  const auto ex = tiny_corpus(4);
  const auto v = vocab_of(ex);
  auto cfg = small_config(v.size());
  cfg.multimodal = false;
  NamBert<float> m(cfg, 4);
  auto in = make_batch(ex, v, toy().table, toy().atlas, cfg.max_seq).input;
  const auto before = m.forward(in);
  for (auto& x : in.pinyin) x = static_cast<float>((static_cast<int>(x) * 7 + 3) % 27);
  for (auto& x : in.glyph_table) x = 1.0f - x;
  CHECK(m.forward(in) == before);

  cfg.multimodal = true;
  NamBert<float> full(cfg, 4);
  const auto in2 = make_batch(ex, v, toy().table, toy().atlas, cfg.max_seq).input;
  CHECK(full.forward(in2) != full.forward(in));
}

TEST_CASE("training is seeded and lowers the loss") {
  const auto ex = tiny_corpus(40);
  const auto v = vocab_of(ex);
  const auto cfg = small_config(v.size());
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.optim.lr = 2e-3;
  tc.seed = 5;
  tc.unk_dropout = 0.1;
  const auto log_path = testutil::temp_dir("train") / "m.jsonl";
  tc.metrics_log = log_path;
  NamBert<float> a(cfg, 1), b(cfg, 1);
  const auto ra = train(a, ex, v, toy().table, toy().atlas, tc);
  tc.metrics_log.clear();
  train(b, ex, v, toy().table, toy().atlas, tc);
  CHECK(same_params(a.params(), b.params()));
  REQUIRE(ra.epochs.size() == 3);
  CHECK(ra.epochs[0].steps == 5);
  CHECK(ra.epochs[1].mean_loss < ra.epochs[0].mean_loss);
  CHECK(ra.epochs[2].mean_loss < ra.epochs[1].mean_loss);

  std::ifstream log(log_path);
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == lines + 1);
    CHECK(j.contains("loss"));
    ++lines;
  }
  CHECK(lines == 3);
}

TEST_CASE("non-finite loss names the step") {
  const auto ex = tiny_corpus(4);
  const auto v = vocab_of(ex);
  NamBert<float> m(small_config(v.size()), 2);
  m.params().get("output.bias").value[5] = std::nanf("");
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train(m, ex, v, toy().table, toy().atlas, tc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("glyph pretraining") {
  GlyphAtlas ten;
  for (std::size_t i = 0; i < 10; ++i) {
    const char32_t c = toy().atlas.chars()[i * 7];
    ten.insert(c, toy().atlas.bitmap(c));
  }
  const auto cfg = small_config(kNumReserved + 1);
  SUBCASE("identifies ten characters and touches only the glyph encoder") {
    NamBert<float> m(cfg, 6);
    const NamBert<float> init(cfg, 6);
    GlyphPretrainConfig gc;
    gc.epochs = 200;
    const auto r = pretrain_glyph(m, ten, gc);
    CHECK(r.clean_accuracy >= 0.9);
    CHECK(r.epoch_loss.back() < r.epoch_loss.front());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      const bool glyph = m.params()[i].name.starts_with("glyph.");
      CHECK((m.params()[i].value == init.params()[i].value) != glyph);
    }
  }
  SUBCASE("zero epochs keep the initialization") {
    NamBert<float> m(cfg, 6);
    const NamBert<float> init(cfg, 6);
    GlyphPretrainConfig gc;
    gc.epochs = 0;
    pretrain_glyph(m, ten, gc);
    CHECK(same_params(m.params(), init.params()));
  }
  SUBCASE("seeded") {
    NamBert<float> a(cfg, 6), b(cfg, 6);
    GlyphPretrainConfig gc;
    gc.epochs = 5;
    pretrain_glyph(a, ten, gc);
    pretrain_glyph(b, ten, gc);
    CHECK(same_params(a.params(), b.params(), "glyph."));
  }
  SUBCASE("needs two characters") {
    GlyphAtlas one;
    one.insert(U'中', toy().atlas.bitmap(toy().atlas.chars()[0]));
    NamBert<float> m(cfg, 6);
    CHECK_THROWS_AS(pretrain_glyph(m, one, GlyphPretrainConfig{}), ConfigError);
  }
}

TEST_CASE("masked-LM pretraining") {
  const std::vector<std::u32string> fifty(toy().clean.begin(), toy().clean.begin() + 50);
  const auto v = build_vocab(fifty);
  auto cfg = small_config(v.size());
  cfg.multimodal = false;
  SUBCASE("overfits fifty sentences") {
    auto big = cfg;
    big.d_s = 64;
    big.layers = 2;
    NamBert<float> m(big, 7);
    MlmConfig mc;
    mc.epochs = 200;
    mc.batch_size = 16;
    mc.lr = 2e-3;
    mc.mask_rate = 0.3;
    pretrain_mlm(m, fifty, v, toy().table, toy().atlas, mc);
    const auto failures = build_filter_set(fifty, make_masked_predictor(m, v, toy().table, toy().atlas), 50);
    std::size_t total = 0;
    for (const auto& s : fifty) total += s.size();
    const double acc = 1.0 - static_cast<double>(failures.size()) / static_cast<double>(total);
    MESSAGE("restoration accuracy " << acc);
    CHECK(acc >= 0.9);
  }
  SUBCASE("degenerate configurations") {
    NamBert<float> m(cfg, 7);
    MlmConfig mc;
    mc.mask_rate = 0.0;
    CHECK_THROWS_AS(pretrain_mlm(m, fifty, v, toy().table, toy().atlas, mc), ConfigError);
    mc.mask_rate = 0.15;
    CHECK_THROWS_AS(pretrain_mlm(m, std::span<const std::u32string>{}, v, toy().table, toy().atlas, mc),
                    ConfigError);
  }
  SUBCASE("seeded") {
    NamBert<float> a(cfg, 7), b(cfg, 7);
    MlmConfig mc;
    mc.epochs = 2;
    pretrain_mlm(a, fifty, v, toy().table, toy().atlas, mc);
    pretrain_mlm(b, fifty, v, toy().table, toy().atlas, mc);
    CHECK(same_params(a.params(), b.params()));
  }
}

TEST_CASE("evaluation leaves out uncorrectable examples") {
  const std::vector<Example> ex{{u32("我受"), u32("我爱")}, {u32("我爱"), u32("我爱")}};
  const auto v = build_vocab(std::vector<std::u32string>{u32("我受爱")});
  const auto v_small = build_vocab(std::vector<std::u32string>{u32("我受")});
  CHECK(!is_uncorrectable(ex[0], v));
  CHECK(is_uncorrectable(ex[0], v_small));
  CHECK(!is_uncorrectable(ex[1], v_small));
  NamBert<float> m(small_config(v_small.size()), 8);
  const auto r = evaluate(m, ex, v_small, toy().table, toy().atlas);
  CHECK(r.excluded == 1);
  CHECK(r.metrics.sentences == 1);
  CHECK(r.predictions.size() == 1);
}
