#include "nambert/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "nambert/error.hpp"
#include "nambert/log.hpp"
#include "nambert/rng.hpp"

namespace nambert {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

void apply_ablation(const Ablation& a, ModelConfig& model, TrainConfig& train) {
  if (a.front_fusion && a.align) throw ConfigError("front fusion and align fusion cannot be combined");
  if (a.no_multimodal) model.multimodal = false;
  if (a.no_focal) train.focal = false;
  if (a.front_fusion) model.fusion = FusionMode::front;
  if (a.align) model.fusion = FusionMode::align;
}

LossWeights loss_weights(const ModelConfig& cfg, bool focal) {
  if (!focal) return {0.0, 1.0, 1.0};
  return {cfg.gamma, cfg.alpha_keep, cfg.alpha_other};
}

nlohmann::json to_json(const EpochStats& e) {
  nlohmann::json j{{"epoch", e.epoch},     {"loss", e.mean_loss}, {"steps", e.steps},
                   {"clamped", e.clamped}, {"seconds", e.seconds}};
  if (e.train_f1) j["train_f1"] = *e.train_f1;
  return j;
}

namespace {

template <typename T>
void check_finite(double loss, int epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
  }
}

std::vector<std::size_t> shuffled(std::size_t n, SplitRng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot write metrics log " + path.string());
  }
  void write(const EpochStats& e) {
    if (out_.is_open()) out_ << to_json(e).dump() << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

template <typename T>
std::vector<T> row_weights(std::span<const int> labels, std::span<const unsigned char> mask, const LossWeights& w) {
  std::vector<T> out(labels.size(), T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i] || labels[i] == kPadId || labels[i] == kUnkId) continue;
    out[i] = T(labels[i] == kKeepId ? w.alpha_keep : w.alpha_other);
  }
  return out;
}

template <typename T>
Var weighted_loss(Graph<T>& g, Var logits, std::span<const int> labels, std::span<const T> weights,
                  const LossWeights& w, nn::FocalStats* stats) {
  std::size_t active = 0;
  for (T x : weights) active += x != T(0);
  if (!active) return Var{};
  return nn::focal_loss(g, logits, labels, weights, T(w.gamma), T(1) / T(active), stats);
}

}  // namespace

template <typename T>
Var batch_loss(Graph<T>& g, NamBert<T>& model, const Batch& batch, const LossWeights& w, nn::FocalStats* stats) {
  const auto vars = model.forward_graph(g, batch.input);
  const auto weights = row_weights<T>(batch.labels, batch.input.mask, w);
  return weighted_loss<T>(g, vars.logits, batch.labels, weights, w, stats);
}

template <typename T>
TrainResult train(NamBert<T>& model, std::span<const Example> corpus, const Vocab& vocab, const PinyinTable& table,
                  const GlyphAtlas& atlas, const TrainConfig& cfg) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  if (cfg.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.unk_dropout < 0 || cfg.unk_dropout > 1) throw ConfigError("unk_dropout must be in [0, 1]");
  if (vocab.size() != model.config().vocab_size) throw ConfigError("vocabulary size does not match the model");
  const LossWeights w = loss_weights(model.config(), cfg.focal);
  nn::Optimizer<T> opt(cfg.optim);
  SplitRng rng(cfg.seed);
  MetricsLog log(cfg.metrics_log);
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled(corpus.size(), rng);
    EpochStats es;
    es.epoch = epoch;
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Example> rows;
      for (std::size_t k = start; k < end; ++k) rows.push_back(corpus[order[k]]);
      Batch batch = make_batch(rows, vocab, table, atlas, model.config().max_seq, Padding::to_longest);
      if (cfg.unk_dropout > 0) {
        for (std::size_t b = 0; b < batch.size(); ++b) {
          for (std::size_t i = 0; i < batch.lengths[b]; ++i) {
            const std::size_t pos = b * batch.input.seq + i;
            if (!rng.bernoulli(cfg.unk_dropout)) continue;
            batch.input.ids[pos] = kUnkId;
            batch.input.glyph_index[pos] = 0;
            if (batch.labels[pos] == kKeepId) batch.labels[pos] = vocab.id_or_unk(rows[b].target[i]);
          }
        }
      }
      Graph<T> g;
      nn::FocalStats stats;
      Var loss = batch_loss(g, model, batch, w, &stats);
      if (!loss.valid()) continue;
      const double value = static_cast<double>(g.value(loss)[0]);
      check_finite<T>(value, epoch, es.steps + 1);
      g.backward(loss);
      opt.step(model.params());
      loss_sum += value;
      es.clamped += stats.clamped;
      ++es.steps;
    }
    es.mean_loss = es.steps ? loss_sum / static_cast<double>(es.steps) : 0.0;
    if (cfg.stop_at_train_f1 > 0) es.train_f1 = evaluate(model, corpus, vocab, table, atlas).metrics.f1;
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.write(es);
    log::info("epoch " + std::to_string(epoch) + " loss " + std::to_string(es.mean_loss) +
              (es.train_f1 ? " train_f1 " + std::to_string(*es.train_f1) : std::string()));
    result.epochs.push_back(es);
    if (es.train_f1 && *es.train_f1 >= cfg.stop_at_train_f1) break;
  }
  return result;
}

template <typename T>
GlyphPretrainResult pretrain_glyph(NamBert<T>& model, const GlyphAtlas& atlas, const GlyphPretrainConfig& cfg) {
  const std::size_t n = atlas.size();
  if (n < 2) throw ConfigError("glyph pretraining needs at least 2 characters in the atlas");
  if (cfg.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (cfg.flip_prob < 0 || cfg.flip_prob > 1) throw ConfigError("flip_prob must be in [0, 1]");
  const auto d_g = static_cast<std::size_t>(model.config().d_g);
  SplitRng rng(cfg.seed);

  nn::ParamStore<T> head;
  nn::Rng init(cfg.seed ^ 0xC1A551F1ull);
  head.add("classifier.weight", nn::xavier_init<T>(d_g, n, init));
  head.add("classifier.bias", Tensor<T>({n}));
  nn::OptimizerConfig oc;
  oc.lr = cfg.lr;
  nn::Optimizer<T> opt_model(oc), opt_head(oc);

  auto run = [&](std::span<const std::size_t> idx, bool noisy, Graph<T>& g) {
    ModelInput in;
    in.batch = 1;
    in.seq = idx.size();
    in.glyph_table.reserve(idx.size() * kGlyphPixels);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& px = atlas.bitmap(atlas.chars()[idx[k]]).pixels;
      for (float v : px) in.glyph_table.push_back(noisy && rng.bernoulli(cfg.flip_prob) ? 1.0f - v : v);
      in.glyph_index.push_back(static_cast<int>(k));
    }
    Var h = model.encode_graphemic(g, in);
    h = nn::reshape(g, h, Shape{idx.size(), d_g});
    return nn::linear(g, h, g.param(head.get("classifier.weight")), g.param(head.get("classifier.bias")));
  };

  GlyphPretrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    double sum = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Graph<T> g;
      Var logits = run(idx, true, g);
      std::vector<int> targets(idx.begin(), idx.end());
      std::vector<T> weights(idx.size(), T(1));
      Var loss = nn::focal_loss(g, logits, targets, std::span<const T>(weights), T(0), T(1) / T(idx.size()));
      const double value = static_cast<double>(g.value(loss)[0]);
      check_finite<T>(value, epoch, steps + 1);
      g.backward(loss);
      opt_model.step(model.params());
      opt_head.step(head);
      sum += value;
      ++steps;
    }
    result.epoch_loss.push_back(sum / static_cast<double>(steps));
  }

  std::size_t hit = 0;
  for (std::size_t start = 0; start < n; start += 256) {
    const std::size_t end = std::min(n, start + 256);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Graph<T> g(false);
    const auto& z = g.value(run(idx, false, g));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = z.data() + r * n;
      hit += static_cast<std::size_t>(std::max_element(row, row + n) - row) == idx[r];
    }
  }
  result.clean_accuracy = static_cast<double>(hit) / static_cast<double>(n);
  return result;
}

template <typename T>
TrainResult pretrain_mlm(NamBert<T>& model, std::span<const std::u32string> sentences, const Vocab& vocab,
                         const PinyinTable& table, const GlyphAtlas& atlas, const MlmConfig& cfg) {
  if (sentences.empty()) throw ConfigError("masked-LM corpus is empty");
  if (!(cfg.mask_rate > 0 && cfg.mask_rate <= 1)) throw ConfigError("mask_rate must be in (0, 1]");
  if (cfg.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (vocab.size() != model.config().vocab_size) throw ConfigError("vocabulary size does not match the model");
  nn::OptimizerConfig oc;
  oc.lr = cfg.lr;
  nn::Optimizer<T> opt(oc);
  SplitRng rng(cfg.seed);
  MetricsLog log(cfg.metrics_log);
  const LossWeights w{0.0, 1.0, 1.0};
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled(sentences.size(), rng);
    EpochStats es;
    es.epoch = epoch;
    double sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Example> rows;
      for (std::size_t k = start; k < end; ++k) rows.push_back({sentences[order[k]], sentences[order[k]]});
      Batch batch = make_batch(rows, vocab, table, atlas, model.config().max_seq, Padding::to_longest);
      auto& in = batch.input;
      std::vector<int> labels(in.positions(), kPadId);
      std::vector<T> weights(in.positions(), T(0));
      for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t i = 0; i < batch.lengths[b]; ++i) {
          const std::size_t pos = b * in.seq + i;
          if (!rng.bernoulli(cfg.mask_rate)) continue;
          const int target = vocab.id_or_unk(rows[b].source[i]);
          in.ids[pos] = kMaskId;
          std::fill_n(in.pinyin.begin() + static_cast<std::ptrdiff_t>(pos * kPinyinLength), kPinyinLength, 0.0f);
          in.glyph_index[pos] = 0;
          if (target == kUnkId) continue;
          labels[pos] = target;
          weights[pos] = T(1);
        }
      }
      Graph<T> g;
      const auto vars = model.forward_graph(g, in);
      Var loss = weighted_loss<T>(g, vars.logits, labels, weights, w, nullptr);
      if (!loss.valid()) continue;
      const double value = static_cast<double>(g.value(loss)[0]);
      check_finite<T>(value, epoch, es.steps + 1);
      g.backward(loss);
      opt.step(model.params());
      sum += value;
      ++es.steps;
    }
    es.mean_loss = es.steps ? sum / static_cast<double>(es.steps) : 0.0;
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.write(es);
    log::info("mlm epoch " + std::to_string(epoch) + " loss " + std::to_string(es.mean_loss));
    result.epochs.push_back(es);
  }
  return result;
}

template <typename T>
std::vector<std::u32string> correct_sentences(const NamBert<T>& model, std::span<const std::u32string> sentences,
                                              const Vocab& vocab, const PinyinTable& table, const GlyphAtlas& atlas,
                                              std::size_t batch_size) {
  if (batch_size == 0) batch_size = 1;
  std::vector<std::u32string> out;
  out.reserve(sentences.size());
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const std::size_t end = std::min(sentences.size(), start + batch_size);
    std::vector<Example> rows;
    for (std::size_t k = start; k < end; ++k) rows.push_back({sentences[k], sentences[k]});
    const Batch batch = make_batch(rows, vocab, table, atlas, model.config().max_seq, Padding::to_longest);
    if (batch.input.seq == 0) {
      for (const auto& r : rows) out.push_back(r.source);
      continue;
    }
    const auto ids = model.predict_ids(batch.input);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      std::span<const int> row(ids.data() + b * batch.input.seq, batch.lengths[b]);
      out.push_back(decode(row, rows[b].source, vocab));
    }
  }
  return out;
}

template <typename T>
SentenceCorrector make_corrector(const NamBert<T>& model, const Vocab& vocab, const PinyinTable& table,
                                 const GlyphAtlas& atlas) {
  return [&model, &vocab, &table, &atlas](std::span<const std::u32string> s) {
    return correct_sentences(model, s, vocab, table, atlas);
  };
}

template <typename T>
MaskedPredictor make_masked_predictor(const NamBert<T>& model, const Vocab& vocab, const PinyinTable& table,
                                      const GlyphAtlas& atlas) {
  return [&model, &vocab, &table, &atlas](std::span<const MaskedQuery> queries) {
    std::vector<Example> rows;
    for (const auto& q : queries) rows.push_back({*q.sentence, *q.sentence});
    Batch batch = make_batch(rows, vocab, table, atlas, model.config().max_seq, Padding::to_longest);
    auto& in = batch.input;
    std::vector<std::optional<char32_t>> out(queries.size());
    std::vector<std::size_t> live;
    for (std::size_t b = 0; b < queries.size(); ++b) {
      // positions cut off by truncation cannot be restored
      if (queries[b].position >= batch.lengths[b]) continue;
      const std::size_t pos = b * in.seq + queries[b].position;
      in.ids[pos] = kMaskId;
      std::fill_n(in.pinyin.begin() + static_cast<std::ptrdiff_t>(pos * kPinyinLength), kPinyinLength, 0.0f);
      in.glyph_index[pos] = 0;
      live.push_back(b);
    }
    if (live.empty()) return out;
    const auto ids = model.predict_ids(in);
    for (std::size_t b : live) {
      const int id = ids[b * in.seq + queries[b].position];
      if (!is_reserved_id(id) && id < vocab.size()) out[b] = vocab.char_at(id);
    }
    return out;
  };
}

bool is_uncorrectable(const Example& ex, const Vocab& vocab) {
  for (std::size_t i = 0; i < ex.target.size() && i < ex.source.size(); ++i)
    if (ex.source[i] != ex.target[i] && !vocab.contains(ex.target[i])) return true;
  return false;
}

template <typename T>
Evaluation evaluate(const NamBert<T>& model, std::span<const Example> corpus, const Vocab& vocab,
                    const PinyinTable& table, const GlyphAtlas& atlas) {
  Evaluation ev;
  std::vector<std::u32string> sources, targets;
  for (const auto& ex : corpus) {
    if (is_uncorrectable(ex, vocab)) {
      ++ev.excluded;
      continue;
    }
    sources.push_back(ex.source);
    targets.push_back(ex.target);
  }
  ev.predictions = correct_sentences(model, sources, vocab, table, atlas);
  ev.metrics = sentence_metrics(sources, ev.predictions, targets);
  return ev;
}

#define NAMBERT_INSTANTIATE(T)                                                                                   \
  template Var batch_loss<T>(Graph<T>&, NamBert<T>&, const Batch&, const LossWeights&, nn::FocalStats*);         \
  template TrainResult train<T>(NamBert<T>&, std::span<const Example>, const Vocab&, const PinyinTable&,          \
                                const GlyphAtlas&, const TrainConfig&);                                          \
  template GlyphPretrainResult pretrain_glyph<T>(NamBert<T>&, const GlyphAtlas&, const GlyphPretrainConfig&);     \
  template TrainResult pretrain_mlm<T>(NamBert<T>&, std::span<const std::u32string>, const Vocab&,                \
                                       const PinyinTable&, const GlyphAtlas&, const MlmConfig&);                 \
  template std::vector<std::u32string> correct_sentences<T>(const NamBert<T>&, std::span<const std::u32string>,   \
                                                            const Vocab&, const PinyinTable&, const GlyphAtlas&, \
                                                            std::size_t);                                        \
  template SentenceCorrector make_corrector<T>(const NamBert<T>&, const Vocab&, const PinyinTable&,               \
                                               const GlyphAtlas&);                                               \
  template MaskedPredictor make_masked_predictor<T>(const NamBert<T>&, const Vocab&, const PinyinTable&,          \
                                                    const GlyphAtlas&);                                          \
  template Evaluation evaluate<T>(const NamBert<T>&, std::span<const Example>, const Vocab&, const PinyinTable&,  \
                                  const GlyphAtlas&);

NAMBERT_INSTANTIATE(float)
NAMBERT_INSTANTIATE(double)

#undef NAMBERT_INSTANTIATE

}  // namespace nambert
