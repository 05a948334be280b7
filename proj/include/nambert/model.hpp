#pragma once

// NamBert: phonetic, graphemic and semantic encoders, forget-gated embedding
// residual, non-aligned posterior fusion and a per-position output head whose
// index 1 (KEEP) means "source character is correct".

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/autograd.hpp"
#include "nambert/chardata.hpp"

namespace nambert {

enum class FusionMode {
  posterior,  // concat(H_s, H_p, H_g) -> linear, after the transformer stack
  front,      // concat + project before the transformer stack
  align,      // project H_p and H_g to d_s and add to H_s
};

FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(FusionMode m);

struct ModelConfig {
  int vocab_size = kNumReserved;
  int d_s = 64;
  int d_p = 6;
  int d_g = 128;
  int layers = 2;
  int heads = 2;
  int max_seq = 32;
  int ffn_mult = 4;
  std::array<int, 2> glyph_hidden{512, 256};
  bool multimodal = true;
  FusionMode fusion = FusionMode::posterior;
  double gamma = 2.0;
  double alpha_keep = 0.2;
  double alpha_other = 1.0;

  int fusion_input_width() const { return d_s + d_p + d_g; }
  int head_dim() const { return d_s / heads; }
  // Throws ConfigError on any inconsistency.
  void validate() const;

  // 768-wide semantic encoder with 6-wide phonetic and 128-wide graphemic
  // outputs, so the fusion layer maps 902 -> 768.
  static ModelConfig full_preset(int vocab_size);
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// One batch of model inputs, [B, n] positions flattened row-major.
struct ModelInput {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids;                 // [B * n], PAD = 0
  std::vector<float> pinyin;            // [B * n * 6] raw letter codes 0..26
  std::vector<float> glyph_table;       // [U * 1024] distinct bitmaps of the batch
  std::vector<int> glyph_index;         // [B * n] row into glyph_table
  std::vector<unsigned char> mask;      // [B * n] 1 = real token

  std::size_t positions() const { return batch * seq; }
  std::size_t glyph_rows() const { return glyph_table.size() / kGlyphPixels; }
  void validate() const;
};

// Handles to intermediate activations of one forward pass.
struct ForwardVars {
  nn::Var embeddings;   // E
  nn::Var hidden;       // H, transformer stack output
  nn::Var gate;         // sigma(E W_f + b_f)
  nn::Var semantic;     // H^(s) = gate * E + H
  nn::Var phonetic;     // H^(p)
  nn::Var graphemic;    // H^(g)
  nn::Var concat;       // H^(m); invalid in align mode
  nn::Var fused;        // fused features fed to the head
  nn::Var logits;       // [B, n, m]
};

template <typename T>
class NamBert {
 public:
  // Fresh parameters drawn from `seed`.
  NamBert(ModelConfig cfg, std::uint64_t seed);
  // Adopts existing parameters; names and shapes must match the config.
  NamBert(ModelConfig cfg, nn::ParamStore<T> params);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  // Expected parameter names and shapes, in store order.
  static std::vector<std::pair<std::string, nn::Shape>> parameter_layout(const ModelConfig& cfg);

  // Individual stages, exposed for tests and probes.
  nn::Var encode_phonetic(nn::Graph<T>& g, const ModelInput& in);
  nn::Var encode_graphemic(nn::Graph<T>& g, const ModelInput& in);
  // Returns E and fills `vars` with hidden, gate and semantic. `stack_input`
  // replaces E + positions as transformer input when valid (front fusion).
  void encode_semantic(nn::Graph<T>& g, const ModelInput& in, ForwardVars& vars,
                       nn::Var stack_input = nn::Var{});
  nn::Var transformer_block(nn::Graph<T>& g, nn::Var x, std::span<const unsigned char> mask, int layer);
  // Posterior fusion: concat(semantic, phonetic, graphemic) -> linear to d_s.
  nn::Var fuse(nn::Graph<T>& g, nn::Var semantic, nn::Var phonetic, nn::Var graphemic, nn::Var* concat = nullptr);

  // Full pass honoring config().multimodal and config().fusion.
  ForwardVars forward_graph(nn::Graph<T>& g, const ModelInput& in);
  // Softmax probabilities [B, n, m].
  // Inference runs on an untracked graph and never writes to the parameters.
  nn::Tensor<T> forward(const ModelInput& in) const;
  // Per-position argmax ids, [B * n].
  std::vector<int> predict_ids(const ModelInput& in) const;

 private:
  nn::Var p(nn::Graph<T>& g, const std::string& name) { return g.param(params_.get(name)); }
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  nn::ParamStore<T> params_;
};

// Per-position decision rule: argmax in {PAD, KEEP, UNK, MASK} keeps the
// source character, any other id emits that vocabulary character. Positions
// beyond `predicted_ids` (truncation) keep the source.
std::u32string decode(std::span<const int> predicted_ids, std::u32string_view source, const Vocab& vocab);

// Argmax decode of a [B, n, m] probability tensor for batch row `row`.
template <typename T>
std::u32string decode_probs(const nn::Tensor<T>& probs, std::size_t row, std::u32string_view source,
                            const Vocab& vocab);

extern template class NamBert<float>;
extern template class NamBert<double>;

}  // namespace nambert
