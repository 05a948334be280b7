#include "nambert/model.hpp"

#include <algorithm>
#include <cmath>

#include "nambert/optim.hpp"

namespace nambert {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "posterior") return FusionMode::posterior;
  if (s == "front") return FusionMode::front;
  if (s == "align") return FusionMode::align;
  throw ConfigError("unknown fusion mode '" + s + "' (expected posterior, front or align)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::posterior: return "posterior";
    case FusionMode::front: return "front";
    case FusionMode::align: return "align";
  }
  return "posterior";
}

void ModelConfig::validate() const {
  if (vocab_size <= kNumReserved) throw ConfigError("vocab_size must exceed the 4 reserved ids");
  if (d_s <= 0 || d_p <= 0 || d_g <= 0) throw ConfigError("encoder widths must be positive");
  if (layers < 0) throw ConfigError("layers must be >= 0");
  if (heads <= 0 || d_s % heads != 0) {
    throw ConfigError("d_s (" + std::to_string(d_s) + ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (max_seq <= 0) throw ConfigError("max_seq must be positive");
  if (ffn_mult <= 0) throw ConfigError("ffn_mult must be positive");
  if (glyph_hidden[0] <= 0 || glyph_hidden[1] <= 0) throw ConfigError("glyph hidden widths must be positive");
  if (gamma < 0) throw ConfigError("gamma must be >= 0");
  if (alpha_keep < 0 || alpha_other < 0) throw ConfigError("alpha weights must be >= 0");
}

ModelConfig ModelConfig::full_preset(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_s = 768;
  c.d_p = 6;
  c.d_g = 128;
  c.layers = 12;
  c.heads = 12;
  c.max_seq = 512;
  c.ffn_mult = 4;
  c.glyph_hidden = {512, 256};
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_s", c.d_s},
          {"d_p", c.d_p},
          {"d_g", c.d_g},
          {"layers", c.layers},
          {"heads", c.heads},
          {"max_seq", c.max_seq},
          {"ffn_mult", c.ffn_mult},
          {"glyph_hidden", {c.glyph_hidden[0], c.glyph_hidden[1]}},
          {"multimodal", c.multimodal},
          {"fusion", to_string(c.fusion)},
          {"gamma", c.gamma},
          {"alpha_keep", c.alpha_keep},
          {"alpha_other", c.alpha_other}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_s = j.value("d_s", c.d_s);
    c.d_p = j.value("d_p", c.d_p);
    c.d_g = j.value("d_g", c.d_g);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.max_seq = j.value("max_seq", c.max_seq);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    if (j.contains("glyph_hidden")) {
      const auto& gh = j.at("glyph_hidden");
      if (!gh.is_array() || gh.size() != 2) throw ConfigError("glyph_hidden must hold exactly 2 widths");
      c.glyph_hidden = {gh[0].get<int>(), gh[1].get<int>()};
    }
    c.multimodal = j.value("multimodal", c.multimodal);
    c.fusion = parse_fusion_mode(j.value("fusion", to_string(c.fusion)));
    c.gamma = j.value("gamma", c.gamma);
    c.alpha_keep = j.value("alpha_keep", c.alpha_keep);
    c.alpha_other = j.value("alpha_other", c.alpha_other);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

void ModelInput::validate() const {
  const std::size_t n = positions();
  if (ids.size() != n || glyph_index.size() != n || mask.size() != n || pinyin.size() != n * kPinyinLength) {
    throw DimensionError("model input: per-position arrays do not match [" + std::to_string(batch) + ", " +
                         std::to_string(seq) + "]");
  }
  if (glyph_table.size() % kGlyphPixels != 0) throw DimensionError("model input: glyph table is not a multiple of 1024");
  const auto rows = static_cast<int>(glyph_rows());
  for (int gi : glyph_index)
    if (gi < 0 || gi >= rows) throw InputError("model input: glyph index out of range");
}

template <typename T>
std::vector<std::pair<std::string, Shape>> NamBert<T>::parameter_layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_s);
  const auto dff = d * static_cast<std::size_t>(c.ffn_mult);
  const auto dp = static_cast<std::size_t>(c.d_p), dg = static_cast<std::size_t>(c.d_g);
  const auto h1 = static_cast<std::size_t>(c.glyph_hidden[0]), h2 = static_cast<std::size_t>(c.glyph_hidden[1]);
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("semantic.word_embeddings", Shape{static_cast<std::size_t>(c.vocab_size), d});
  out.emplace_back("semantic.position_embeddings", Shape{static_cast<std::size_t>(c.max_seq), d});
  for (int l = 0; l < c.layers; ++l) {
    const std::string pre = "semantic.layer" + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1.gamma", Shape{d});
    out.emplace_back(pre + "ln1.beta", Shape{d});
    for (const char* w : {"q", "k", "v", "o"}) {
      out.emplace_back(pre + "attn.w" + w, Shape{d, d});
      out.emplace_back(pre + "attn.b" + w, Shape{d});
    }
    out.emplace_back(pre + "ln2.gamma", Shape{d});
    out.emplace_back(pre + "ln2.beta", Shape{d});
    out.emplace_back(pre + "ffn.w1", Shape{d, dff});
    out.emplace_back(pre + "ffn.b1", Shape{dff});
    out.emplace_back(pre + "ffn.w2", Shape{dff, d});
    out.emplace_back(pre + "ffn.b2", Shape{d});
  }
  out.emplace_back("semantic.final_ln.gamma", Shape{d});
  out.emplace_back("semantic.final_ln.beta", Shape{d});
  out.emplace_back("semantic.gate.weight", Shape{d, d});
  out.emplace_back("semantic.gate.bias", Shape{d});
  out.emplace_back("phonetic.weight", Shape{kPinyinLength, dp});
  out.emplace_back("phonetic.bias", Shape{dp});
  out.emplace_back("glyph.w1", Shape{kGlyphPixels, h1});
  out.emplace_back("glyph.b1", Shape{h1});
  out.emplace_back("glyph.w2", Shape{h1, h2});
  out.emplace_back("glyph.b2", Shape{h2});
  out.emplace_back("glyph.w3", Shape{h2, dg});
  out.emplace_back("glyph.b3", Shape{dg});
  if (c.fusion == FusionMode::align) {
    out.emplace_back("align.phonetic.weight", Shape{dp, d});
    out.emplace_back("align.phonetic.bias", Shape{d});
    out.emplace_back("align.glyph.weight", Shape{dg, d});
    out.emplace_back("align.glyph.bias", Shape{d});
  } else {
    out.emplace_back("fusion.weight", Shape{static_cast<std::size_t>(c.fusion_input_width()), d});
    out.emplace_back("fusion.bias", Shape{d});
  }
  out.emplace_back("output.weight", Shape{d, static_cast<std::size_t>(c.vocab_size)});
  out.emplace_back("output.bias", Shape{static_cast<std::size_t>(c.vocab_size)});
  return out;
}

template <typename T>
NamBert<T>::NamBert(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init_params(seed);
}

template <typename T>
NamBert<T>::NamBert(ModelConfig cfg, nn::ParamStore<T> params) : cfg_(cfg) {
  cfg_.validate();
  const auto layout = parameter_layout(cfg_);
  if (params.size() != layout.size()) {
    throw FormatError("parameter count " + std::to_string(params.size()) + " does not match the config (" +
                      std::to_string(layout.size()) + ")");
  }
  for (const auto& [name, shape] : layout) {
    if (!params.contains(name)) throw FormatError("missing parameter '" + name + "'");
    const auto& got = params.get(name).value.shape();
    if (got != shape) {
      throw FormatError("parameter '" + name + "' has shape " + nn::shape_str(got) + ", config expects " +
                        nn::shape_str(shape));
    }
    params_.add(name, params.get(name).value);
  }
}

template <typename T>
void NamBert<T>::init_params(std::uint64_t seed) {
  nn::Rng rng(seed);
  for (const auto& [name, shape] : parameter_layout(cfg_)) {
    Tensor<T> t(shape);
    if (name.ends_with(".gamma")) {
      t.fill(T(1));
    } else if (name.ends_with("_embeddings")) {
      t = nn::normal_init<T>(shape, 0.02, rng);
    } else if (shape.size() == 2) {
      t = nn::xavier_init<T>(shape[0], shape[1], rng);
    }
    params_.add(name, std::move(t));
  }
}

template <typename T>
Var NamBert<T>::encode_phonetic(Graph<T>& g, const ModelInput& in) {
  Tensor<T> codes({in.batch, in.seq, kPinyinLength});
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = T(in.pinyin[i]) / T(kPinyinAlphabet);
  Var x = g.constant(std::move(codes));
  return nn::linear(g, x, p(g, "phonetic.weight"), p(g, "phonetic.bias"));
}

template <typename T>
Var NamBert<T>::encode_graphemic(Graph<T>& g, const ModelInput& in) {
  // The encoder is position-wise, so it runs once per distinct bitmap and the
  // rows are gathered back to positions.
  const std::size_t rows = in.glyph_rows();
  Tensor<T> pix({rows, kGlyphPixels});
  for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = T(in.glyph_table[i]);
  Var x = g.constant(std::move(pix));
  Var h = nn::gelu(g, nn::linear(g, x, p(g, "glyph.w1"), p(g, "glyph.b1")));
  h = nn::gelu(g, nn::linear(g, h, p(g, "glyph.w2"), p(g, "glyph.b2")));
  Var table = nn::linear(g, h, p(g, "glyph.w3"), p(g, "glyph.b3"));
  return nn::embedding(g, table, std::span<const int>(in.glyph_index), Shape{in.batch, in.seq});
}

template <typename T>
Var NamBert<T>::transformer_block(Graph<T>& g, Var x, std::span<const unsigned char> mask, int layer) {
  const std::string pre = "semantic.layer" + std::to_string(layer) + ".";
  const auto heads = static_cast<std::size_t>(cfg_.heads);
  const auto& xs = g.shape(x);
  if (xs.size() != 3 || xs[2] != static_cast<std::size_t>(cfg_.d_s)) {
    throw DimensionError("transformer block expects [B, n, " + std::to_string(cfg_.d_s) + "], got " +
                         nn::shape_str(xs));
  }
  if (xs[1] > static_cast<std::size_t>(cfg_.max_seq)) {
    throw InputError("sequence length " + std::to_string(xs[1]) + " exceeds max_seq " + std::to_string(cfg_.max_seq));
  }
  Var h = nn::layer_norm(g, x, p(g, pre + "ln1.gamma"), p(g, pre + "ln1.beta"));
  Var q = nn::split_heads(g, nn::linear(g, h, p(g, pre + "attn.wq"), p(g, pre + "attn.bq")), heads);
  Var k = nn::split_heads(g, nn::linear(g, h, p(g, pre + "attn.wk"), p(g, pre + "attn.bk")), heads);
  Var v = nn::split_heads(g, nn::linear(g, h, p(g, pre + "attn.wv"), p(g, pre + "attn.bv")), heads);
  Var scores = nn::scale(g, nn::bmm(g, q, k, true), T(1) / std::sqrt(T(cfg_.head_dim())));
  scores = nn::mask_keys(g, scores, mask, heads);
  Var attn = nn::softmax(g, scores);
  Var ctx = nn::merge_heads(g, nn::bmm(g, attn, v, false), heads);
  x = nn::add(g, x, nn::linear(g, ctx, p(g, pre + "attn.wo"), p(g, pre + "attn.bo")));
  h = nn::layer_norm(g, x, p(g, pre + "ln2.gamma"), p(g, pre + "ln2.beta"));
  h = nn::gelu(g, nn::linear(g, h, p(g, pre + "ffn.w1"), p(g, pre + "ffn.b1")));
  return nn::add(g, x, nn::linear(g, h, p(g, pre + "ffn.w2"), p(g, pre + "ffn.b2")));
}

template <typename T>
void NamBert<T>::encode_semantic(Graph<T>& g, const ModelInput& in, ForwardVars& vars, Var stack_input) {
  if (in.seq > static_cast<std::size_t>(cfg_.max_seq)) {
    throw InputError("sequence length " + std::to_string(in.seq) + " exceeds max_seq " + std::to_string(cfg_.max_seq));
  }
  for (int id : in.ids)
    if (id < 0 || id >= cfg_.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " out of range for vocab of " +
                       std::to_string(cfg_.vocab_size));
    }
  const Shape prefix{in.batch, in.seq};
  // E = X W_e, a bias-free lookup
  vars.embeddings = nn::embedding(g, p(g, "semantic.word_embeddings"), std::span<const int>(in.ids), prefix);
  Var x = stack_input;
  if (!x.valid()) {
    std::vector<int> pos(in.positions());
    for (std::size_t b = 0; b < in.batch; ++b)
      for (std::size_t i = 0; i < in.seq; ++i) pos[b * in.seq + i] = static_cast<int>(i);
    Var pe = nn::embedding(g, p(g, "semantic.position_embeddings"), std::span<const int>(pos), prefix);
    x = nn::add(g, vars.embeddings, pe);
  }
  for (int l = 0; l < cfg_.layers; ++l) x = transformer_block(g, x, in.mask, l);
  vars.hidden = nn::layer_norm(g, x, p(g, "semantic.final_ln.gamma"), p(g, "semantic.final_ln.beta"));
  vars.gate = nn::sigmoid(g, nn::linear(g, vars.embeddings, p(g, "semantic.gate.weight"), p(g, "semantic.gate.bias")));
  vars.semantic = nn::add(g, nn::mul(g, vars.gate, vars.embeddings), vars.hidden);
}

template <typename T>
Var NamBert<T>::fuse(Graph<T>& g, Var semantic, Var phonetic, Var graphemic, Var* concat) {
  const auto& ss = g.shape(semantic);
  const auto& ps = g.shape(phonetic);
  const auto& gs = g.shape(graphemic);
  if (ss.back() != static_cast<std::size_t>(cfg_.d_s) || ps.back() != static_cast<std::size_t>(cfg_.d_p) ||
      gs.back() != static_cast<std::size_t>(cfg_.d_g)) {
    throw DimensionError("fuse: widths " + std::to_string(ss.back()) + "+" + std::to_string(ps.back()) + "+" +
                         std::to_string(gs.back()) + " do not match config " + std::to_string(cfg_.d_s) + "+" +
                         std::to_string(cfg_.d_p) + "+" + std::to_string(cfg_.d_g));
  }
  const Var parts[] = {semantic, phonetic, graphemic};
  Var m = nn::concat_last<T>(g, parts);
  if (concat) *concat = m;
  return nn::linear(g, m, p(g, "fusion.weight"), p(g, "fusion.bias"));
}

template <typename T>
ForwardVars NamBert<T>::forward_graph(Graph<T>& g, const ModelInput& in) {
  in.validate();
  ForwardVars vars;
  if (cfg_.multimodal) {
    vars.phonetic = encode_phonetic(g, in);
    vars.graphemic = encode_graphemic(g, in);
  } else {
    ModelInput blank;
    blank.batch = in.batch;
    blank.seq = in.seq;
    blank.pinyin.assign(in.pinyin.size(), 0.0f);
    blank.glyph_table.assign(kGlyphPixels, 0.0f);
    blank.glyph_index.assign(in.positions(), 0);
    vars.phonetic = encode_phonetic(g, blank);
    vars.graphemic = encode_graphemic(g, blank);
  }
  switch (cfg_.fusion) {
    case FusionMode::posterior:
      encode_semantic(g, in, vars);
      vars.fused = fuse(g, vars.semantic, vars.phonetic, vars.graphemic, &vars.concat);
      break;
    case FusionMode::front: {
      // Fusion happens on E + positions; the stack consumes the fused features.
      std::vector<int> pos(in.positions());
      for (std::size_t b = 0; b < in.batch; ++b)
        for (std::size_t i = 0; i < in.seq; ++i) pos[b * in.seq + i] = static_cast<int>(i);
      const Shape prefix{in.batch, in.seq};
      Var e = nn::embedding(g, p(g, "semantic.word_embeddings"), std::span<const int>(in.ids), prefix);
      Var pe = nn::embedding(g, p(g, "semantic.position_embeddings"), std::span<const int>(pos), prefix);
      Var front = fuse(g, nn::add(g, e, pe), vars.phonetic, vars.graphemic, &vars.concat);
      encode_semantic(g, in, vars, front);
      vars.fused = vars.semantic;
      break;
    }
    case FusionMode::align: {
      encode_semantic(g, in, vars);
      Var pp = nn::linear(g, vars.phonetic, p(g, "align.phonetic.weight"), p(g, "align.phonetic.bias"));
      Var gp = nn::linear(g, vars.graphemic, p(g, "align.glyph.weight"), p(g, "align.glyph.bias"));
      vars.fused = nn::add(g, nn::add(g, vars.semantic, pp), gp);
      break;
    }
  }
  vars.logits = nn::linear(g, vars.fused, p(g, "output.weight"), p(g, "output.bias"));
  return vars;
}

template <typename T>
Tensor<T> NamBert<T>::forward(const ModelInput& in) const {
  Graph<T> g(false);
  // untracked graphs only read parameter values
  auto& self = const_cast<NamBert&>(*this);
  ForwardVars vars = self.forward_graph(g, in);
  return g.value(nn::softmax(g, vars.logits));
}

template <typename T>
std::vector<int> NamBert<T>::predict_ids(const ModelInput& in) const {
  Graph<T> g(false);
  auto& self = const_cast<NamBert&>(*this);
  ForwardVars vars = self.forward_graph(g, in);
  const auto& z = g.value(vars.logits);
  const std::size_t m = z.last_dim();
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const T* row = z.data() + r * m;
    out[r] = static_cast<int>(std::max_element(row, row + m) - row);
  }
  return out;
}

std::u32string decode(std::span<const int> predicted_ids, std::u32string_view source, const Vocab& vocab) {
  std::u32string out(source);
  const std::size_t n = std::min(predicted_ids.size(), source.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int id = predicted_ids[i];
    if (is_reserved_id(id) || id >= vocab.size()) continue;
    out[i] = vocab.char_at(id);
  }
  return out;
}

template <typename T>
std::u32string decode_probs(const Tensor<T>& probs, std::size_t row, std::u32string_view source, const Vocab& vocab) {
  if (probs.rank() != 3 || row >= probs.dim(0)) throw DimensionError("decode_probs: expected [B, n, m] probabilities");
  const std::size_t n = probs.dim(1), m = probs.dim(2);
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = probs.data() + (row * n + i) * m;
    ids[i] = static_cast<int>(std::max_element(p, p + m) - p);
  }
  return decode(ids, source, vocab);
}

template class NamBert<float>;
template class NamBert<double>;
template std::u32string decode_probs<float>(const Tensor<float>&, std::size_t, std::u32string_view, const Vocab&);
template std::u32string decode_probs<double>(const Tensor<double>&, std::size_t, std::u32string_view, const Vocab&);

}  // namespace nambert
