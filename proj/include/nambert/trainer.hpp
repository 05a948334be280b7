#pragma once

// Training loops: glyph-encoder pretraining, masked-LM pretraining of the
// semantic-only filter model, and focal-loss fine-tuning with ablations.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/corpus.hpp"
#include "nambert/macu.hpp"
#include "nambert/metrics.hpp"
#include "nambert/model.hpp"
#include "nambert/optim.hpp"

namespace nambert {

struct Ablation {
  bool no_multimodal = false;
  bool no_focal = false;
  bool front_fusion = false;
  bool align = false;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  nn::OptimizerConfig optim{};
  std::uint64_t seed = 1;
  bool focal = true;
  // Probability of hiding a position's identity: the id becomes UNK and the
  // glyph is blanked, pinyin stays (the way unseen characters are fed). Such
  // positions are labelled with the explicit target id.
  double unk_dropout = 0.0;
  // Stop once training-set F1 reaches this value (0 disables the check).
  double stop_at_train_f1 = 0.0;
  std::filesystem::path metrics_log;  // JSON lines, one per epoch; empty = none
};

// Applies ablation flags to the model and training configs. Front fusion and
// align are mutually exclusive (ConfigError).
void apply_ablation(const Ablation& a, ModelConfig& model, TrainConfig& train);

struct LossWeights {
  double gamma = 2.0;
  double alpha_keep = 0.2;
  double alpha_other = 1.0;
};
// Focal-off means gamma = 0 and alpha = 1 everywhere (plain cross-entropy).
LossWeights loss_weights(const ModelConfig& cfg, bool focal);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t clamped = 0;  // probabilities floored inside the loss
  double seconds = 0.0;
  std::optional<double> train_f1;
};

nlohmann::json to_json(const EpochStats& e);

struct TrainResult {
  std::vector<EpochStats> epochs;
};

// Mean focal loss over the labelled, non-PAD positions of a batch. Positions
// labelled UNK carry no weight. Returns an invalid Var when nothing is weighted.
template <typename T>
nn::Var batch_loss(nn::Graph<T>& g, NamBert<T>& model, const Batch& batch, const LossWeights& w,
                   nn::FocalStats* stats = nullptr);

// Throws NumericError naming epoch and step on a non-finite loss.
template <typename T>
TrainResult train(NamBert<T>& model, std::span<const Example> corpus, const Vocab& vocab, const PinyinTable& table,
                  const GlyphAtlas& atlas, const TrainConfig& cfg);

struct GlyphPretrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double lr = 1e-3;
  double flip_prob = 0.05;
  std::uint64_t seed = 1;
};

struct GlyphPretrainResult {
  std::vector<double> epoch_loss;
  double clean_accuracy = 0.0;  // identification accuracy on noiseless bitmaps
};

// Trains the graphemic encoder plus a temporary classifier to identify each
// atlas character from its bitmap with pixels flipped (v -> 1 - v) at
// flip_prob. Only glyph.* parameters of the model change.
template <typename T>
GlyphPretrainResult pretrain_glyph(NamBert<T>& model, const GlyphAtlas& atlas, const GlyphPretrainConfig& cfg);

struct MlmConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double mask_rate = 0.15;
  std::uint64_t seed = 1;
  std::filesystem::path metrics_log;
};

// Trains the model to restore MASKed positions of clean sentences (explicit
// target ids, cross-entropy). Pinyin and glyph inputs of masked positions are
// blanked.
template <typename T>
TrainResult pretrain_mlm(NamBert<T>& model, std::span<const std::u32string> sentences, const Vocab& vocab,
                         const PinyinTable& table, const GlyphAtlas& atlas, const MlmConfig& cfg);

// Inference helpers.
template <typename T>
std::vector<std::u32string> correct_sentences(const NamBert<T>& model, std::span<const std::u32string> sentences,
                                              const Vocab& vocab, const PinyinTable& table, const GlyphAtlas& atlas,
                                              std::size_t batch_size = 64);

template <typename T>
SentenceCorrector make_corrector(const NamBert<T>& model, const Vocab& vocab, const PinyinTable& table,
                                 const GlyphAtlas& atlas);

// Predicts the character at a MASKed position.
template <typename T>
MaskedPredictor make_masked_predictor(const NamBert<T>& model, const Vocab& vocab, const PinyinTable& table,
                                      const GlyphAtlas& atlas);

struct Evaluation {
  CscMetrics metrics;
  std::size_t excluded = 0;  // examples with an out-of-vocabulary target character
  std::vector<std::u32string> predictions;  // for the scored examples, in order
};

// Corrects the sources and scores them; uncorrectable examples are left out.
template <typename T>
Evaluation evaluate(const NamBert<T>& model, std::span<const Example> corpus, const Vocab& vocab,
                    const PinyinTable& table, const GlyphAtlas& atlas);

// True when some target character differs from its source and is not in the vocabulary.
bool is_uncorrectable(const Example& ex, const Vocab& vocab);

}  // namespace nambert
