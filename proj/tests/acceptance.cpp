// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/checkpoint.hpp"
#include "nambert/config.hpp"
#include "nambert/corpus.hpp"
#include "nambert/gradcheck.hpp"
#include "nambert/llm.hpp"
#include "nambert/log.hpp"
#include "nambert/macu.hpp"
#include "nambert/metrics.hpp"
#include "nambert/mock_llm.hpp"
#include "nambert/trainer.hpp"
#include "nambert/utf8.hpp"

using namespace nambert;
using namespace nambert::nn;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kSource = NAMBERT_SOURCE_DIR;
const fs::path kCli = NAMBERT_CLI_PATH;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      if (!failures_.empty()) failures_ += "; ";
      failures_ += what;
    }
  }
  void note(const std::string& s) {
    if (!notes_.empty()) notes_ += ", ";
    notes_ += s;
  }
  Outcome done() const { return {pass_, pass_ ? notes_ : failures_ + (notes_.empty() ? "" : " | " + notes_)}; }

 private:
  bool pass_ = true;
  std::string failures_, notes_;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

template <typename T>
Tensor<T> rand_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

std::u32string u32(const std::string& s) { return utf8::decode(s); }

struct ToyData {
  RunConfig cfg;
  PinyinTable table;
  GlyphAtlas atlas;
  std::vector<Example> train, test;
  std::vector<std::u32string> clean_test;

  ToyData() {
    cfg = load_run_config(kSource / "configs" / "toy.json");
    table = load_pinyin_table(cfg.data.pinyin);
    atlas = load_glyphs(cfg.data.glyphs);
    train = parse_parallel(cfg.data.train).examples;
    test = parse_parallel(cfg.data.test).examples;
    clean_test = read_sentences(cfg.data.clean_test);
  }
};

const ToyData& toy() {
  static const ToyData d;
  return d;
}

ConfusionSets toy_confusion() {
  const auto& d = toy();
  std::vector<char32_t> chars;
  for (char32_t c : d.table.chars())
    if (d.atlas.contains(c)) chars.push_back(c);
  return build_confusion_sets(chars, d.table, d.atlas, d.cfg.confusion);
}

// 1 --------------------------------------------------------------------------

Outcome gradient_fidelity() {
  Checker c;
  double worst_layer = 0, worst_e2e = 0;
  auto layer = [&](const std::string& name, const GraphFn& fn, ParamStore<double>& s) {
    const auto r = grad_check(fn, s);
    worst_layer = std::max(worst_layer, r.max_rel_error);
    c.expect(r.checked > 0 && r.max_rel_error < 1e-4, name + " rel error " + fmt(r.max_rel_error));
  };
  // Random weighted mean of the outputs. A mean keeps the scalar near 1, so
  // differencing roundoff stays small on gradients that are exactly zero
  // (key biases, which softmax shift invariance cancels).
  auto dot = [](Graph<double>& g, Var y, std::uint64_t seed) {
    const auto shape = g.shape(y);
    return scale(g, sum(g, mul(g, y, g.constant(rand_tensor<double>(shape, seed * 31 + 7)))),
                 1.0 / static_cast<double>(shape_numel(shape)));
  };

  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    {
      ParamStore<double> s;
      s.add("x", rand_tensor<double>({3, 4}, seed));
      s.add("w", rand_tensor<double>({4, 5}, seed + 10));
      s.add("b", rand_tensor<double>({5}, seed + 20));
      layer("linear", [&](Graph<double>& g) {
        return dot(g, linear(g, g.param(s.get("x")), g.param(s.get("w")), g.param(s.get("b"))), seed);
      }, s);
    }
    {
      ParamStore<double> s;
      s.add("x", rand_tensor<double>({4, 6}, seed, 2.0));
      s.add("gamma", rand_tensor<double>({6}, seed + 1));
      s.add("beta", rand_tensor<double>({6}, seed + 2));
      layer("layer_norm", [&](Graph<double>& g) {
        return dot(g, layer_norm(g, g.param(s.get("x")), g.param(s.get("gamma")), g.param(s.get("beta"))), seed);
      }, s);
    }
    {
      ParamStore<double> s;
      s.add("table", rand_tensor<double>({6, 4}, seed));
      const std::vector<int> ids{5, 0, 3, 3};
      layer("embedding", [&](Graph<double>& g) {
        return dot(g, embedding(g, g.param(s.get("table")), std::span<const int>(ids), Shape{2, 2}), seed);
      }, s);
    }
    {
      ParamStore<double> s;
      s.add("x", rand_tensor<double>({3, 5}, seed, 2.0));
      layer("softmax/gelu/sigmoid/tanh", [&](Graph<double>& g) {
        Var x = g.param(s.get("x"));
        return dot(g, add(g, softmax(g, gelu(g, x)), mul(g, sigmoid(g, x), tanh(g, x))), seed);
      }, s);
    }
    {
      ParamStore<double> s;
      s.add("z", rand_tensor<double>({5, 7}, seed, 2.0));
      const std::vector<int> t{1, 4, 6, 0, 2};
      const std::vector<double> w{0.2, 1, 1, 0, 1};
      layer("focal_loss", [&](Graph<double>& g) {
        return focal_loss(g, g.param(s.get("z")), std::span<const int>(t), std::span<const double>(w), 2.0, 0.25);
      }, s);
    }

    // model-level components at toy dims
    ModelConfig mc;
    mc.vocab_size = 12;
    mc.d_s = 16;
    mc.d_p = 6;
    mc.d_g = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.max_seq = 8;
    mc.ffn_mult = 2;
    mc.glyph_hidden = {24, 12};
    ModelInput in;
    in.batch = 2;
    in.seq = 3;
    in.ids = {4, 5, 6, 7, 8, 0};
    in.mask = {1, 1, 1, 1, 1, 0};
    std::mt19937 rng(static_cast<unsigned>(seed));
    for (int i = 0; i < 36; ++i) in.pinyin.push_back(static_cast<float>(rng() % 27));
    for (int i = 0; i < 3 * 1024; ++i) in.glyph_table.push_back((rng() % 3) / 2.0f);
    in.glyph_index = {0, 1, 2, 1, 0, 0};
    std::vector<int> labels{1, 9, 1, 1, 11, 0};
    std::vector<double> lw{0.2, 1, 0.2, 0.2, 1, 0};

    GradCheckOptions sampled;
    sampled.max_per_param = 24;
    sampled.seed = seed;

    {
      ModelConfig d8 = mc;
      d8.d_s = 8;
      NamBert<double> m(d8, seed);
      const auto x = rand_tensor<double>({1, 3, 8}, seed + 40);
      const std::vector<unsigned char> mask{1, 1, 1};
      const auto r = grad_check([&](Graph<double>& g) { return dot(g, m.transformer_block(g, g.constant(x), mask, 0), seed); },
                                m.params());
      worst_layer = std::max(worst_layer, r.max_rel_error);
      c.expect(r.max_rel_error < 1e-4, "transformer block rel error " + fmt(r.max_rel_error));
    }
    {
      NamBert<double> m(mc, seed);
      auto enc = [&](const char* name, std::function<Var(Graph<double>&)> f) {
        const auto r = grad_check([&](Graph<double>& g) { return dot(g, f(g), seed); }, m.params(), sampled);
        worst_layer = std::max(worst_layer, r.max_rel_error);
        c.expect(r.max_rel_error < 1e-4, std::string(name) + " rel error " + fmt(r.max_rel_error) + " at " +
                                             r.worst_param + "[" + std::to_string(r.worst_index) + "] analytic " +
                                             fmt(r.worst_analytic, 8) + " numeric " + fmt(r.worst_numeric, 8));
      };
      enc("phonetic encoder", [&](Graph<double>& g) { return m.encode_phonetic(g, in); });
      enc("graphemic encoder", [&](Graph<double>& g) { return m.encode_graphemic(g, in); });
      enc("gated semantic path", [&](Graph<double>& g) {
        ForwardVars v;
        m.encode_semantic(g, in, v);
        return v.semantic;
      });
      enc("posterior fusion", [&](Graph<double>& g) {
        return m.fuse(g, g.constant(rand_tensor<double>({2, 3, 16}, seed)), m.encode_phonetic(g, in),
                      m.encode_graphemic(g, in));
      });
    }
    {
      NamBert<double> m(mc, seed);
      const auto r = grad_check(
          [&](Graph<double>& g) {
            const auto v = m.forward_graph(g, in);
            Var z = reshape(g, v.logits, Shape{6, 12});
            return focal_loss(g, z, std::span<const int>(labels), std::span<const double>(lw), 2.0, 1.0 / 5);
          },
          m.params(), sampled);
      worst_e2e = std::max(worst_e2e, r.max_rel_error);
      c.expect(r.max_rel_error < 1e-3, "end-to-end rel error " + fmt(r.max_rel_error) + " at " + r.worst_param);
    }
  }
  c.note("worst layer " + fmt(worst_layer, 3));
  c.note("worst end-to-end " + fmt(worst_e2e, 3));
  return c.done();
}

// 2 --------------------------------------------------------------------------

Outcome fusion_shape() {
  Checker c;
  auto cfg = ModelConfig::full_preset(16);
  c.expect(cfg.fusion_input_width() == 902, "preset fusion input width " + std::to_string(cfg.fusion_input_width()));
  // One transformer layer keeps the check fast; the widths do not depend on depth.
  cfg.layers = 1;
  NamBert<float> m(cfg, 1);
  ModelInput in;
  in.batch = 1;
  in.seq = 3;
  in.ids = {4, 5, 6};
  in.mask = {1, 1, 1};
  in.pinyin.assign(18, 1.0f);
  in.glyph_table.assign(1024, 0.5f);
  in.glyph_index = {0, 0, 0};
  Graph<float> g(false);
  const auto v = m.forward_graph(g, in);
  const auto concat = g.shape(v.concat).back();
  const auto fused = g.shape(v.fused).back();
  c.expect(concat == 902, "concat width " + std::to_string(concat));
  c.expect(fused == 768, "fused width " + std::to_string(fused));
  c.note("concat " + std::to_string(concat) + " -> fused " + std::to_string(fused));
  return c.done();
}

// 3 --------------------------------------------------------------------------

Outcome focal_degeneracy() {
  Checker c;
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t n = 3 + seed % 5, m = 4 + seed % 7;
    const auto z = rand_tensor<double>({n, m}, seed, 4.0);
    std::mt19937_64 rng(seed);
    std::vector<int> t(n);
    for (auto& x : t) x = static_cast<int>(rng() % m);
    const std::vector<double> w(n, 1.0);
    Graph<double> g(false);
    const double fl = g.value(focal_loss(g, g.constant(z), std::span<const int>(t), std::span<const double>(w), 0.0))[0];
    double ce = 0;
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -1e300, s = 0;
      for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, z.at(r, j));
      for (std::size_t j = 0; j < m; ++j) s += std::exp(z.at(r, j) - mx);
      ce -= z.at(r, static_cast<std::size_t>(t[r])) - mx - std::log(s);
    }
    worst = std::max(worst, std::abs(fl - ce));
  }
  c.expect(worst <= 1e-9, "focal(gamma 0) vs CE differs by " + fmt(worst));
  const double single = focal_loss_value(std::vector<double>{0.9}, std::vector<double>{0.5}, 2.0);
  const double hand = 0.5 * 0.01 * -std::log(0.9);
  c.expect(std::abs(single - 5.2680e-4) <= 1e-7, "single term " + fmt(single, 8));
  c.expect(std::abs(single - hand) <= 1e-15, "single term disagrees with 0.5*0.01*(-ln 0.9)");
  c.note("max |FL-CE| " + fmt(worst, 3));
  c.note("single term " + fmt(single, 6));
  return c.done();
}

// 4 --------------------------------------------------------------------------

Outcome macu_arithmetic() {
  Checker c;
  std::vector<double> phi;
  for (int i = 0; i < kNumBins; ++i) phi.push_back(bin_lower(i));
  const auto w = macu_weights(phi);
  double sw = 0;
  for (double x : w) sw += x;
  c.expect(std::abs(sw - 1.0) <= 1e-12, "sum w = " + fmt(sw, 17));
  c.expect(std::abs(w[19] - 0.1) <= 1e-12, "w(0.95) = " + fmt(w[19], 17));
  for (double a : {0.0, 0.3, 0.77, 1.0}) {
    const double s = macu_score(std::vector<double>(kNumBins, a), phi);
    c.expect(std::abs(s - a) <= 1e-12, "constant accuracy " + fmt(a) + " scored " + fmt(s, 17));
  }

  const auto sets = toy_confusion();
  const auto& d = toy();
  std::vector<TestPosition> all;
  for (std::size_t s = 0; s < d.clean_test.size(); ++s)
    for (std::size_t i = 0; i < d.clean_test[s].size(); ++i) all.push_back({s, i});
  const SentenceCorrector copy = [](std::span<const std::u32string> in) {
    return std::vector<std::u32string>(in.begin(), in.end());
  };
  std::size_t pairs = 0, subs = 0;
  for (const auto* set : {&sets.phonetic, &sets.graphemic}) {
    for (const auto& p : set->pairs()) {
      ++pairs;
      c.expect(similarity_in_bin(p.similarity, p.bin), "pair outside its bin");
    }
    const auto r = run_macu(d.clean_test, all, *set, copy, {d.cfg.seed, 256});
    for (const auto& s : r.substitutions) {
      ++subs;
      const bool in_bin = s.similarity >= bin_lower(s.bin) - 1e-12 &&
                          (s.similarity < bin_lower(s.bin) + kBinWidth || (s.bin == kNumBins - 1 && s.similarity <= 1.0));
      if (!in_bin) c.expect(false, "substitution with s=" + fmt(s.similarity) + " in bin " + std::to_string(s.bin));
    }
  }
  c.note(std::to_string(pairs) + " pairs and " + std::to_string(subs) + " substitutions checked");
  return c.done();
}

// 5 --------------------------------------------------------------------------

Outcome similarity_properties() {
  Checker c;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01;
  std::size_t cases = 0;
  for (int t = 0; t < 2000; ++t) {
    const std::size_t d = 2 + rng() % 200;
    const double k = 0.5 + (rng() % 100) / 10.0;
    std::vector<double> x(d), y(d), neg(d), scaled(d);
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = n01(rng);
      y[i] = n01(rng);
      neg[i] = -k * x[i];
      scaled[i] = k * y[i];
    }
    const double sxy = char_similarity(x, y), syx = char_similarity(y, x);
    c.expect(sxy == syx, "asymmetric");
    c.expect(sxy >= 0.0 && sxy <= 1.0, "out of range: " + fmt(sxy));
    c.expect(std::abs(char_similarity(x, x) - 1.0) <= 1e-9, "self-similarity");
    c.expect(std::abs(char_similarity(x, neg)) <= 1e-9, "antiparallel gives " + fmt(char_similarity(x, neg)));
    c.expect(std::abs(char_similarity(x, scaled) - sxy) <= 1e-12, "not scale invariant");
    if (!c.done().pass) break;
    ++cases;
  }
  c.note(std::to_string(cases) + " random cases");
  return c.done();
}

// 6 --------------------------------------------------------------------------

Outcome label_round_trip() {
  Checker c;
  std::mt19937_64 rng(6);
  const auto& chars = toy().table.chars();
  std::size_t changed = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t len = 1 + rng() % 24;
    Example ex;
    for (std::size_t i = 0; i < len; ++i) {
      const char32_t a = chars[rng() % chars.size()];
      ex.target.push_back(a);
      ex.source.push_back(rng() % 4 == 0 ? chars[rng() % chars.size()] : a);
    }
    changed += ex.errors();
    const std::vector<std::u32string> text{ex.source, ex.target};
    const auto vocab = build_vocab(text);
    std::vector<int> x, y;
    for (std::size_t i = 0; i < len; ++i) {
      x.push_back(vocab.id_or_unk(ex.source[i]));
      y.push_back(vocab.id_or_unk(ex.target[i]));
    }
    const auto yp = remap_labels(x, y);
    Tensor<double> probs({1, len, static_cast<std::size_t>(vocab.size())});
    for (std::size_t i = 0; i < len; ++i) probs.at(0, i, static_cast<std::size_t>(yp[i])) = 1.0;
    if (decode_probs(probs, 0, ex.source, vocab) != ex.target) {
      c.expect(false, "case " + std::to_string(t) + " did not reproduce its target");
      break;
    }
  }
  c.note("1000 cases, " + std::to_string(changed) + " substituted positions");
  return c.done();
}

// 7 and 8 --------------------------------------------------------------------

struct ToyRun {
  double train_f1 = 0, test_f1 = 0, seconds = 0;
  std::size_t epochs = 0;
};

ToyRun toy_run(bool multimodal) {
  const auto& d = toy();
  std::vector<std::u32string> text;
  for (const auto& ex : d.train) {
    text.push_back(ex.target);
    text.push_back(ex.source);
  }
  const auto vocab = build_vocab(text);
  auto mc = d.cfg.model;
  mc.vocab_size = vocab.size();
  mc.multimodal = multimodal;
  const auto t0 = std::chrono::steady_clock::now();
  NamBert<float> model(mc, d.cfg.seed);
  if (multimodal) pretrain_glyph(model, d.atlas, d.cfg.glyph);
  const auto result = train(model, d.train, vocab, d.table, d.atlas, d.cfg.train);
  ToyRun r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.epochs = result.epochs.size();
  r.train_f1 = evaluate(model, d.train, vocab, d.table, d.atlas).metrics.f1;
  r.test_f1 = evaluate(model, d.test, vocab, d.table, d.atlas).metrics.f1;
  return r;
}

ToyRun full_run;

Outcome toy_learning() {
  Checker c;
  full_run = toy_run(true);
  c.expect(toy().train.size() == 500, "toy corpus has " + std::to_string(toy().train.size()) + " sentences");
  c.expect(full_run.train_f1 >= 0.95, "training F1 " + fmt(full_run.train_f1));
  c.expect(full_run.seconds < 600, "took " + fmt(full_run.seconds) + " s");
  c.note("training F1 " + fmt(full_run.train_f1) + " after " + std::to_string(full_run.epochs) + " epochs");
  c.note(fmt(full_run.seconds, 3) + " s");
  return c.done();
}

Outcome ablation_direction() {
  Checker c;
  const auto off = toy_run(false);
  c.expect(full_run.test_f1 >= off.test_f1,
           "full F1 " + fmt(full_run.test_f1) + " below multimodal-off F1 " + fmt(off.test_f1));
  c.note("held-out F1 full " + fmt(full_run.test_f1) + " vs multimodal-off " + fmt(off.test_f1) + ", delta " +
         fmt(full_run.test_f1 - off.test_f1, 3));
  return c.done();
}

// 9 --------------------------------------------------------------------------

Outcome checkpoint_round_trip() {
  Checker c;
  const fs::path dir = fs::temp_directory_path() / "nambert-acceptance-ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto vocab = build_vocab(std::vector<std::u32string>{u32("我爱中国受马妈码")});
  auto mc = toy().cfg.model;
  mc.vocab_size = vocab.size();
  NamBert<float> m(mc, 9);
  save_model(dir / "m.namb", m, vocab);
  const auto back = load_model<float>(dir / "m.namb");
  bool exact = back.model.params().size() == m.params().size();
  for (std::size_t i = 0; exact && i < m.params().size(); ++i)
    exact = back.model.params()[i].name == m.params()[i].name && back.model.params()[i].value == m.params()[i].value;
  c.expect(exact, "round trip not bit exact");
  c.expect(back.vocab.chars() == vocab.chars(), "vocabulary changed");

  const auto bytes = read_binary_file(dir / "m.namb");
  auto write = [&](const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  auto rejected = [&](const fs::path& p, const std::string& must_mention) {
    try {
      load_model<float>(p);
      return false;
    } catch (const FormatError& e) {
      return must_mention.empty() || std::string(e.what()).find(must_mention) != std::string::npos;
    }
  };
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  write(dir / "magic.namb", bad_magic);
  c.expect(rejected(dir / "magic.namb", ""), "corrupted magic accepted");
  auto bad_version = bytes;
  bad_version[4] = 0x7F;
  write(dir / "version.namb", bad_version);
  c.expect(rejected(dir / "version.namb", ""), "unknown version accepted");

  // Header with an edited shape and no array bytes at all: the shape must be
  // the reported problem, which proves it is caught before arrays are read.
  auto raw = read_checkpoint(dir / "m.namb");
  ParamStore<float> edited;
  for (std::size_t i = 0; i < raw.tensors.size(); ++i) {
    auto t = raw.tensors[i].value;
    if (raw.tensors[i].name == "fusion.bias") t = Tensor<float>({t.size() + 3});
    edited.add(raw.tensors[i].name, t);
  }
  write_checkpoint(dir / "shape.namb", raw.config, raw.meta, edited);
  auto shape_bytes = read_binary_file(dir / "shape.namb");
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(shape_bytes[6 + i]) << (8 * i);
  shape_bytes.resize(10 + header_len);
  write(dir / "shape.namb", shape_bytes);
  c.expect(rejected(dir / "shape.namb", "fusion.bias"), "edited manifest shape not rejected from the header");

  auto truncated = bytes;
  truncated.resize(bytes.size() - 100);
  write(dir / "short.namb", truncated);
  c.expect(rejected(dir / "short.namb", ""), "truncated file accepted");
  c.note(std::to_string(m.params().size()) + " tensors bit exact; magic, version, shape and truncation rejected");
  return c.done();
}

// 10 -------------------------------------------------------------------------

Outcome macu_oracles() {
  Checker c;
  const auto& d = toy();
  const auto sets = toy_confusion();
  const std::vector<std::u32string> sents(d.clean_test.begin(), d.clean_test.begin() + 60);
  std::vector<TestPosition> pos;
  for (std::size_t s = 0; s < sents.size(); ++s)
    for (std::size_t i = 0; i < sents[s].size(); ++i) pos.push_back({s, i});
  const SentenceCorrector copy = [](std::span<const std::u32string> in) {
    return std::vector<std::u32string>(in.begin(), in.end());
  };
  for (const auto* set : {&sets.phonetic, &sets.graphemic}) {
    const auto kind = to_string(set->kind());
    const auto rc = run_macu(sents, pos, *set, copy, {d.cfg.seed, 256});
    // The draw is seeded, so a second run issues the same queries in the same
    // order; the gold oracle answers each with the sentence it was made from.
    std::size_t next = 0;
    const SentenceCorrector gold = [&](std::span<const std::u32string> in) {
      std::vector<std::u32string> out;
      for (const auto& q : in) {
        const auto& sub = rc.substitutions.at(next++);
        auto expect_q = sents[sub.sentence];
        expect_q[sub.position] = sub.replacement;
        if (q != expect_q) throw std::logic_error("query order differs between seeded runs");
        out.push_back(sents[sub.sentence]);
      }
      return out;
    };
    const auto rg = run_macu(sents, pos, *set, gold, {d.cfg.seed, 256});
    std::size_t nonempty = 0;
    for (std::size_t b = 0; b < rc.bins.size(); ++b) {
      if (!rc.bins[b].accuracy) continue;
      ++nonempty;
      c.expect(*rc.bins[b].accuracy == 0.0, kind + " copy bin " + std::to_string(b) + " = " + fmt(*rc.bins[b].accuracy));
      c.expect(rg.bins[b].accuracy && *rg.bins[b].accuracy == 1.0, kind + " gold bin " + std::to_string(b));
    }
    c.expect(nonempty > 0, kind + " has no populated bin");
    c.expect(rc.score == 0.0, kind + " copy score " + fmt(rc.score));
    c.expect(std::abs(rg.score - 1.0) <= 1e-12, kind + " gold score " + fmt(rg.score, 17));
    c.note(kind + ": " + std::to_string(nonempty) + " bins, copy " + fmt(rc.score) + ", gold " + fmt(rg.score));
  }
  return c.done();
}

// 11 -------------------------------------------------------------------------

Outcome llm_bridge() {
  Checker c;
  // gold / echo of an error / over-correction / longer answer / quoted gold
  const std::vector<Example> corpus{{u32("我受中国"), u32("我爱中国")},
                                    {u32("马码"), u32("马妈")},
                                    {u32("天气很好"), u32("天气很好")},
                                    {u32("今天很冷"), u32("今天很冷")},
                                    {u32("我门去公园"), u32("我们去公园")}};
  const std::map<std::string, std::string> replies{{"我受中国", "我爱中国"},
                                                   {"马码", "马码"},
                                                   {"天气很好", "天汽很好"},
                                                   {"今天很冷", "今天真的很冷"},
                                                   {"我门去公园", " “我们去公园” "}};
  MockChatServer server([&](const std::string& prompt) { return MockReply{200, replies.at(last_line(prompt)), 0}; });
  server.start();
  LlmEndpoint e;
  e.base_url = server.base_url();
  e.api_key = "k";
  e.model = "mock";
  e.backoff_s = 0.01;
  const fs::path log = fs::temp_directory_path() / "nambert-acceptance-llm.jsonl";
  LlmEvalOptions opts;
  opts.log_path = log;
  const auto r = evaluate_llm(corpus, e, opts);
  // hand count: flagged {1,3,4,5}, erroneous {1,2,5}, TP {1,5}
  const double p = 2.0 / 4.0, rec = 2.0 / 3.0, f1 = 2 * p * rec / (p + rec);
  c.expect(r.metrics.flagged == 4, "flagged " + std::to_string(r.metrics.flagged));
  c.expect(r.metrics.erroneous == 3, "erroneous " + std::to_string(r.metrics.erroneous));
  c.expect(r.metrics.true_positive == 2, "TP " + std::to_string(r.metrics.true_positive));
  c.expect(r.metrics.precision == p && r.metrics.recall == rec && r.metrics.f1 == f1,
           "P/R/F1 " + fmt(r.metrics.precision) + "/" + fmt(r.metrics.recall) + "/" + fmt(r.metrics.f1));
  c.expect(r.length_mismatches == 1 && r.outcomes[3].status == LlmStatus::length_mismatch,
           "length mismatch not recorded");
  const auto replay = replay_llm_log(log);
  c.expect(replay.metrics.f1 == r.metrics.f1 && replay.metrics.true_positive == r.metrics.true_positive,
           "replay differs");
  c.note("P " + fmt(r.metrics.precision) + " R " + fmt(r.metrics.recall) + " F1 " + fmt(r.metrics.f1) +
         ", 1 length mismatch counted as flagged-and-wrong");
  return c.done();
}

// 12 -------------------------------------------------------------------------

Outcome end_to_end_smoke() {
  Checker c;
  const fs::path out = fs::temp_directory_path() / "nambert-acceptance-smoke";
  fs::remove_all(out);
  const std::string cfg = (kSource / "configs" / "toy.json").string();
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* step : {"prepare-data", "pretrain-glyph", "train", "evaluate", "macu"}) {
    const std::string cmd = "'" + kCli.string() + "' " + step + " --config '" + cfg + "' --out '" + out.string() +
                            "' --log-level warn > '" + (out.parent_path() / "nambert-acceptance-smoke.log").string() +
                            "' 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      c.expect(false, std::string(step) + " exited with status " + std::to_string(rc));
      return c.done();
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(seconds < 900, "took " + fmt(seconds) + " s");
  auto read = [&](const char* name) {
    std::ifstream in(out / name);
    return json::parse(in);
  };
  try {
    const auto eval = read("eval.json");
    for (const auto& p : check_metrics_report(eval)) c.expect(false, "eval.json: " + p);
    const auto macu = read("macu.json");
    for (const char* kind : {"phonetic", "graphemic"})
      for (const auto& p : check_macu_report(macu.at(kind))) c.expect(false, std::string("macu.json ") + kind + ": " + p);
    for (const char* kind : {"phonetic", "graphemic"})
      for (const auto& p : check_macu_report(read((std::string("macu_") + kind + ".json").c_str())))
        c.expect(false, std::string("macu_") + kind + ".json: " + p);
    const auto train_report = read("train_report.json");
    c.expect(train_report.contains("train_metrics") && check_metrics_report(train_report["train_metrics"]).empty(),
             "train_report.json malformed");
    for (const char* m : {"manifest-prepare-data.json", "manifest-pretrain-glyph.json", "manifest-train.json",
                          "manifest-evaluate.json", "manifest-macu.json"}) {
      const auto j = read(m);
      c.expect(j.contains("config_hash") && j.contains("seed") && j.contains("versions"), std::string(m) + " malformed");
    }
    c.note("test F1 " + fmt(eval.at("f1").get<double>()) + ", P-MACU " + fmt(macu["phonetic"]["score"].get<double>()) +
           ", G-MACU " + fmt(macu["graphemic"]["score"].get<double>()));
  } catch (const std::exception& e) {
    c.expect(false, std::string("report parsing: ") + e.what());
  }
  c.note(fmt(seconds, 3) + " s");
  return c.done();
}

}  // namespace

int main() {
  log::set_level(log::Level::error);
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no time limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", 120, gradient_fidelity},
      {2, "fusion shape contract", 0, fusion_shape},
      {3, "focal-loss degeneracy", 0, focal_degeneracy},
      {4, "MACU arithmetic", 0, macu_arithmetic},
      {5, "similarity properties", 0, similarity_properties},
      {6, "label-scheme round trip", 0, label_round_trip},
      {7, "toy-scale learning", 600, toy_learning},
      {8, "ablation direction", 0, ablation_direction},
      {9, "checkpoint round trip", 0, checkpoint_round_trip},
      {10, "MACU oracle endpoints", 0, macu_oracles},
      {11, "LLM bridge", 0, llm_bridge},
      {12, "end-to-end smoke", 900, end_to_end_smoke},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_s > 0 && s >= cr.budget_s) {
      o.pass = false;
      o.detail += " (over the " + fmt(cr.budget_s) + " s budget)";
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << cr.id << ". " << cr.name << ": " << o.detail << " [" << fmt(s, 3)
              << " s]" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " of 12 criteria failed" : std::string("all 12 criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
