#include "nambert/cli.hpp"

#include <CLI11.hpp>

#include <Eigen/Core>
#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "nambert/checkpoint.hpp"
#include "nambert/config.hpp"
#include "nambert/error.hpp"
#include "nambert/log.hpp"
#include "nambert/probe.hpp"
#include "nambert/utf8.hpp"

#ifndef NAMBERT_VERSION
#define NAMBERT_VERSION "0.0.0"
#endif

namespace nambert {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Args {
  std::string command;
  fs::path config;
  std::vector<std::string> overrides;
  fs::path out = "out";
  fs::path checkpoint;
  fs::path filter_checkpoint;
  fs::path report;
  fs::path replay;
  std::string text;
  std::string log_level = "info";
};

struct Context {
  Args args;
  RunConfig cfg;
  bool has_config = false;
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& s) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << s;
}

json versions() {
  return {{"nambert", NAMBERT_VERSION},
          {"compiler", __VERSION__},
          {"cplusplus", static_cast<long>(__cplusplus)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

void write_manifest(const Context& ctx, const json& outputs) {
  json m{{"command", ctx.args.command}, {"versions", versions()}, {"outputs", outputs}};
  if (ctx.has_config) {
    m["seed"] = ctx.cfg.seed;
    m["precision"] = ctx.cfg.precision;
    m["config_hash"] = config_hash(ctx.cfg);
    m["config"] = ctx.cfg.effective;
    m["overrides"] = ctx.args.overrides;
  }
  write_json(ctx.args.out / ("manifest-" + ctx.args.command + ".json"), m);
}

const fs::path& require(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("config key '") + key + "' is not set");
  return p;
}

// Prepared corpora in the output directory take precedence over the config.
fs::path prepared(const Context& ctx, const char* file, const fs::path& fallback, const char* key) {
  const fs::path p = ctx.args.out / file;
  if (fs::exists(p)) return p;
  return require(fallback, key);
}

fs::path model_path(const Context& ctx) {
  return ctx.args.checkpoint.empty() ? ctx.args.out / "model.namb" : ctx.args.checkpoint;
}

struct Resources {
  PinyinTable table;
  GlyphAtlas atlas;
};

Resources load_resources(const fs::path& pinyin, const fs::path& glyphs) {
  Resources r;
  r.table = load_pinyin_table(pinyin);
  r.atlas = load_glyphs(glyphs);
  for (const auto& w : r.table.warnings) log::warn(w);
  for (const auto& w : r.atlas.warnings) log::warn(w);
  return r;
}

Resources load_resources(const Context& ctx) {
  return load_resources(require(ctx.cfg.data.pinyin, "data.pinyin"), require(ctx.cfg.data.glyphs, "data.glyphs"));
}

std::vector<Example> load_parallel(const fs::path& p) {
  auto c = parse_parallel(p);
  if (c.skipped) log::warn(p.string() + ": skipped " + std::to_string(c.skipped) + " malformed lines");
  return std::move(c.examples);
}

std::vector<char32_t> feature_chars(const Resources& r) {
  std::vector<char32_t> out;
  for (char32_t c : r.table.chars())
    if (r.atlas.contains(c)) out.push_back(c);
  return out;
}

void write_confusion(const fs::path& path, const ConfusionSet& set) {
  std::string s = "# a\tb\tsimilarity\tbin\n";
  for (const auto& p : set.pairs())
    s += utf8::encode(p.a) + '\t' + utf8::encode(p.b) + '\t' + std::to_string(p.similarity) + '\t' +
         std::to_string(p.bin) + '\n';
  write_text(path, s);
}

json data_meta(const Context& ctx) {
  return {{"pinyin", fs::absolute(ctx.cfg.data.pinyin).string()},
          {"glyphs", fs::absolute(ctx.cfg.data.glyphs).string()},
          {"config_hash", config_hash(ctx.cfg)}};
}

// ---------------------------------------------------------------------------

int cmd_prepare(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto res = load_resources(ctx);
  if (res.table.size() == 0) throw ConfigError("pinyin table is empty");
  if (res.atlas.size() == 0) throw ConfigError("glyph atlas is empty");
  const auto train_sents = read_sentences(require(cfg.data.clean_train, "data.clean_train"));
  const auto test_sents = read_sentences(require(cfg.data.clean_test, "data.clean_test"));

  const auto sets = build_confusion_sets(feature_chars(res), res.table, res.atlas, cfg.confusion);
  if (!sets.skipped_chars.empty())
    log::warn(std::to_string(sets.skipped_chars.size()) + " characters lack pinyin or glyph and were left out");
  const ConfusionSet strong = sets.phonetic.filtered(cfg.prepare.min_similarity);
  if (strong.empty()) throw ConfigError("no phonetic confusion pairs at or above prepare.min_similarity");
  auto [train_pool, held_pool] = strong.split(cfg.prepare.holdout_fraction, cfg.seed);

  const auto train = synthesize_errors(train_sents, train_pool, cfg.prepare.error_rate, cfg.seed);
  const auto test = synthesize_errors(test_sents, strong, cfg.prepare.error_rate, cfg.seed + 1);
  write_parallel(ctx.args.out / "train.tsv", train);
  write_parallel(ctx.args.out / "test.tsv", test);
  write_confusion(ctx.args.out / "confusion_phonetic.tsv", sets.phonetic);
  write_confusion(ctx.args.out / "confusion_graphemic.tsv", sets.graphemic);
  write_confusion(ctx.args.out / "synthesis_train_pairs.tsv", train_pool);
  write_confusion(ctx.args.out / "synthesis_heldout_pairs.tsv", held_pool);

  auto count_errors = [](const std::vector<Example>& ex) {
    std::size_t n = 0;
    for (const auto& e : ex) n += e.errors();
    return n;
  };
  const json report{{"pinyin_entries", res.table.size()},
                    {"glyphs", res.atlas.size()},
                    {"phonetic_pairs", sets.phonetic.size()},
                    {"graphemic_pairs", sets.graphemic.size()},
                    {"synthesis_pairs", strong.size()},
                    {"heldout_pairs", held_pool.size()},
                    {"train_sentences", train.size()},
                    {"train_errors", count_errors(train)},
                    {"test_sentences", test.size()},
                    {"test_errors", count_errors(test)}};
  write_json(ctx.args.out / "prepare.json", report);
  write_manifest(ctx, {"train.tsv", "test.tsv", "confusion_phonetic.tsv", "confusion_graphemic.tsv", "prepare.json"});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

template <typename T>
void load_glyph_encoder(NamBert<T>& model, const fs::path& path) {
  const auto raw = read_checkpoint(path);
  for (std::size_t i = 0; i < raw.tensors.size(); ++i) {
    const auto& src = raw.tensors[i];
    if (!model.params().contains(src.name)) throw FormatError(path.string() + ": unexpected tensor " + src.name);
    auto& dst = model.params().get(src.name);
    if (dst.value.shape() != src.value.shape()) {
      throw ConfigError(path.string() + ": " + src.name + " has shape " + nn::shape_str(src.value.shape()) +
                        ", model expects " + nn::shape_str(dst.value.shape()));
    }
    dst.value = src.value.template cast<T>();
  }
}

template <typename T>
int cmd_pretrain_glyph(Context& ctx) {
  const auto res = load_resources(ctx);
  ModelConfig mc = ctx.cfg.model;
  mc.vocab_size = kNumReserved + 1;  // placeholder, only glyph.* is kept
  NamBert<T> model(mc, ctx.cfg.seed);
  const auto result = pretrain_glyph(model, res.atlas, ctx.cfg.glyph);
  nn::ParamStore<float> keep;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    if (p.name.rfind("glyph.", 0) == 0) keep.add(p.name, p.value.template cast<float>());
  }
  write_checkpoint(ctx.args.out / "glyph.namb", to_json(mc), {{"kind", "glyph-encoder"}}, keep);
  const json report{{"epochs", ctx.cfg.glyph.epochs},
                    {"final_loss", result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()},
                    {"clean_accuracy", result.clean_accuracy},
                    {"characters", res.atlas.size()}};
  write_json(ctx.args.out / "glyph_pretrain.json", report);
  write_manifest(ctx, {"glyph.namb", "glyph_pretrain.json"});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

template <typename T>
int cmd_pretrain_mlm_impl(Context& ctx, const Resources& res, const fs::path& dest, json& report) {
  const auto sents = read_sentences(require(ctx.cfg.data.clean_train, "data.clean_train"));
  if (sents.empty()) throw ConfigError("masked-LM corpus is empty");
  const Vocab vocab = build_vocab(sents);
  ModelConfig mc = ctx.cfg.model;
  mc.vocab_size = vocab.size();
  mc.multimodal = false;
  mc.fusion = FusionMode::posterior;
  NamBert<T> model(mc, ctx.cfg.seed);
  MlmConfig mlm = ctx.cfg.mlm;
  mlm.metrics_log = ctx.args.out / "mlm_metrics.jsonl";
  const auto result = pretrain_mlm(model, sents, vocab, res.table, res.atlas, mlm);
  const auto misses = build_filter_set(sents, make_masked_predictor(model, vocab, res.table, res.atlas), sents.size());
  std::size_t total = 0;
  for (const auto& s : sents) total += std::min<std::size_t>(s.size(), static_cast<std::size_t>(mc.max_seq));
  json meta = data_meta(ctx);
  meta["kind"] = "mlm";
  save_model(dest, model, vocab, meta);
  report = {{"epochs", result.epochs.size()},
            {"final_loss", result.epochs.empty() ? 0.0 : result.epochs.back().mean_loss},
            {"restoration_accuracy", total ? 1.0 - static_cast<double>(misses.size()) / static_cast<double>(total) : 0.0}};
  return kExitOk;
}

template <typename T>
int cmd_pretrain_mlm(Context& ctx) {
  const auto res = load_resources(ctx);
  json report;
  cmd_pretrain_mlm_impl<T>(ctx, res, ctx.args.out / "mlm.namb", report);
  write_json(ctx.args.out / "mlm_pretrain.json", report);
  write_manifest(ctx, {"mlm.namb", "mlm_pretrain.json", "mlm_metrics.jsonl"});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

template <typename T>
int cmd_train(Context& ctx) {
  const auto res = load_resources(ctx);
  const auto train_path = prepared(ctx, "train.tsv", ctx.cfg.data.train, "data.train");
  const auto corpus = load_parallel(train_path);
  if (corpus.empty()) throw ConfigError("training corpus " + train_path.string() + " is empty");
  std::vector<std::u32string> text;
  for (const auto& ex : corpus) {
    text.push_back(ex.target);
    text.push_back(ex.source);
  }
  const Vocab vocab = build_vocab(text);
  ModelConfig mc = ctx.cfg.model;
  mc.vocab_size = vocab.size();
  NamBert<T> model(mc, ctx.cfg.seed);
  const fs::path glyph = ctx.args.out / "glyph.namb";
  const bool pretrained_glyph = fs::exists(glyph) && mc.multimodal;
  if (pretrained_glyph) load_glyph_encoder(model, glyph);

  TrainConfig tc = ctx.cfg.train;
  tc.metrics_log = ctx.args.out / "train_metrics.jsonl";
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(model, corpus, vocab, res.table, res.atlas, tc);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json meta = data_meta(ctx);
  meta["kind"] = "nambert";
  const fs::path dest = ctx.args.checkpoint.empty() ? ctx.args.out / "model.namb" : ctx.args.checkpoint;
  save_model(dest, model, vocab, meta);

  const auto ev = evaluate(model, corpus, vocab, res.table, res.atlas);
  json epochs = json::array();
  for (const auto& e : result.epochs) epochs.push_back(to_json(e));
  const json report{{"train_corpus", train_path.string()},
                    {"pretrained_glyph_encoder", pretrained_glyph},
                    {"epochs_run", result.epochs.size()},
                    {"seconds", seconds},
                    {"epochs", epochs},
                    {"train_metrics", to_json(ev.metrics)}};
  write_json(ctx.args.out / "train_report.json", report);
  write_manifest(ctx, {dest.filename().string(), "train_report.json", "train_metrics.jsonl"});
  std::cout << json{{"epochs_run", result.epochs.size()}, {"train_f1", ev.metrics.f1}, {"seconds", seconds}}.dump()
            << '\n';
  return kExitOk;
}

template <typename T>
int cmd_evaluate(Context& ctx) {
  const auto res = load_resources(ctx);
  const auto loaded = load_model<T>(model_path(ctx));
  const auto test_path = prepared(ctx, "test.tsv", ctx.cfg.data.test, "data.test");
  const auto corpus = load_parallel(test_path);
  const auto ev = evaluate(loaded.model, corpus, loaded.vocab, res.table, res.atlas);
  json report = to_json(ev.metrics);
  report["excluded_uncorrectable"] = ev.excluded;
  report["test_corpus"] = test_path.string();
  report["checkpoint"] = model_path(ctx).string();
  const fs::path dest = ctx.args.report.empty() ? ctx.args.out / "eval.json" : ctx.args.report;
  write_json(dest, report);
  std::string preds;
  std::size_t k = 0;
  for (const auto& ex : corpus) {
    if (is_uncorrectable(ex, loaded.vocab)) continue;
    preds += utf8::encode(ex.source) + '\t' + utf8::encode(ev.predictions[k++]) + '\t' + utf8::encode(ex.target) + '\n';
  }
  write_text(ctx.args.out / "predictions.tsv", preds);
  write_manifest(ctx, {dest.string(), "predictions.tsv"});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

template <typename T>
int cmd_macu(Context& ctx) {
  const auto res = load_resources(ctx);
  const auto loaded = load_model<T>(model_path(ctx));
  fs::path filter_path = ctx.args.filter_checkpoint.empty() ? ctx.args.out / "mlm.namb" : ctx.args.filter_checkpoint;
  if (!fs::exists(filter_path)) {
    log::warn("no filter model at " + filter_path.string() + "; training one now");
    json r;
    cmd_pretrain_mlm_impl<T>(ctx, res, filter_path, r);
  }
  const auto filter = load_model<T>(filter_path);
  const auto sents = read_sentences(require(ctx.cfg.data.clean_test, "data.clean_test"));
  const std::size_t m = std::min(ctx.cfg.macu.filter_sentences, sents.size());
  const auto positions =
      build_filter_set(sents, make_masked_predictor(filter.model, filter.vocab, res.table, res.atlas), m);
  std::size_t total = 0;
  for (std::size_t s = 0; s < m; ++s) total += sents[s].size();
  log::info("filter set: " + std::to_string(positions.size()) + " of " + std::to_string(total) + " positions");

  const auto sets = build_confusion_sets(feature_chars(res), res.table, res.atlas, ctx.cfg.confusion);
  const auto corrector = make_corrector(loaded.model, loaded.vocab, res.table, res.atlas);
  MacuOptions opts;
  opts.seed = ctx.cfg.seed;
  opts.batch_size = ctx.cfg.macu.batch_size;

  json file{{"checkpoint", model_path(ctx).string()},
            {"filter_checkpoint", filter_path.string()},
            {"filter_sentences", m},
            {"filter_positions", positions.size()},
            {"total_positions", total}};
  json summary = json::object();
  std::vector<std::string> outputs;
  for (const auto* set : {&sets.phonetic, &sets.graphemic}) {
    const std::string kind = to_string(set->kind());
    if (ctx.cfg.macu.kind != "both" && ctx.cfg.macu.kind != kind) continue;
    const auto report = run_macu(sents, positions, *set, corrector, opts);
    const json j = to_json(report);
    file[kind] = j;
    summary[kind] = report.score;
    write_json(ctx.args.out / ("macu_" + kind + ".json"), j);
    write_text(ctx.args.out / ("macu_" + kind + ".csv"), to_csv(report));
    outputs.push_back("macu_" + kind + ".json");
    outputs.push_back("macu_" + kind + ".csv");
  }
  const fs::path dest = ctx.args.report.empty() ? ctx.args.out / "macu.json" : ctx.args.report;
  write_json(dest, file);
  outputs.push_back(dest.string());
  write_manifest(ctx, outputs);
  std::cout << summary.dump() << '\n';
  return kExitOk;
}

template <typename T>
int cmd_probe(Context& ctx) {
  const auto res = load_resources(ctx);
  const auto loaded = load_model<T>(model_path(ctx));
  auto& model = const_cast<NamBert<T>&>(loaded.model);
  // one single-character sentence per vocabulary entry with pinyin and glyph
  std::vector<char32_t> chars;
  for (char32_t c : loaded.vocab.chars())
    if (res.table.contains(c) && res.atlas.contains(c)) chars.push_back(c);
  if (chars.size() < 4) throw ConfigError("too few characters with pinyin and glyph to probe");
  std::vector<Example> rows;
  for (char32_t c : chars) rows.push_back({std::u32string(1, c), std::u32string(1, c)});
  const Batch batch = make_batch(rows, loaded.vocab, res.table, res.atlas, model.config().max_seq, Padding::to_longest);
  nn::Graph<T> g(false);
  const auto vars = model.forward_graph(g, batch.input);
  auto features = [&](nn::Var v) {
    const auto& t = g.value(v);
    const std::size_t d = t.last_dim();
    nn::Tensor<double> out({chars.size(), d});
    for (std::size_t i = 0; i < chars.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) = static_cast<double>(t[i * batch.input.seq * d + j]);
    return out;
  };

  std::vector<int> initial;
  std::vector<GlyphBitmap> bitmaps;
  for (char32_t c : chars) {
    initial.push_back(pinyin_initial_class(res.table.code(c)));
    bitmaps.push_back(res.atlas.bitmap(c));
  }
  const auto clusters = glyph_clusters(bitmaps, ctx.cfg.probe.glyph_clusters, ctx.cfg.seed);
  const auto [train_idx, test_idx] = probe_split(chars.size(), ctx.cfg.probe.test_fraction, ctx.cfg.seed);
  ProbeOptions po;
  po.epochs = ctx.cfg.probe.epochs;
  po.lr = ctx.cfg.probe.lr;
  po.seed = ctx.cfg.seed;

  json report{{"characters", chars.size()}, {"train_size", train_idx.size()}, {"test_size", test_idx.size()}};
  const std::pair<const char*, nn::Var> sources[] = {
      {"semantic", vars.semantic}, {"phonetic", vars.phonetic}, {"graphemic", vars.graphemic}, {"fused", vars.fused}};
  for (const auto& [name, var] : sources) {
    const auto f = features(var);
    json row;
    for (const auto& [label_name, labels] :
         {std::pair<const char*, const std::vector<int>*>{"pinyin_initial", &initial}, {"glyph_cluster", &clusters}}) {
      try {
        const auto r = run_probe(f, *labels, train_idx, test_idx, po);
        row[label_name] = {{"test_accuracy", r.test_accuracy}, {"train_accuracy", r.train_accuracy},
                           {"classes", r.classes}};
      } catch (const ConfigError& e) {
        row[label_name] = {{"error", e.what()}};
      }
    }
    report["features"][name] = row;
  }
  const fs::path dest = ctx.args.report.empty() ? ctx.args.out / "probe.json" : ctx.args.report;
  write_json(dest, report);
  write_manifest(ctx, {dest.string()});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

int cmd_llm_eval(Context& ctx) {
  const auto& cfg = ctx.cfg;
  LlmEvaluation ev;
  const fs::path replay = ctx.args.replay.empty() ? cfg.llm.replay : ctx.args.replay;
  fs::path log_path = ctx.args.out / "llm_log.jsonl";
  if (!replay.empty()) {
    ev = replay_llm_log(replay);
    log_path = replay;
  } else {
    auto corpus = load_parallel(prepared(ctx, "test.tsv", cfg.data.test, "data.test"));
    if (cfg.llm.limit && corpus.size() > cfg.llm.limit) corpus.resize(cfg.llm.limit);
    const LlmEndpoint ep = endpoint_from_env(cfg.llm.endpoint);
    if (ep.base_url.empty()) throw ConfigError("no LLM endpoint: set CSC_LLM_BASE_URL or llm.base_url");
    LlmEvalOptions opts;
    opts.prompt_template = cfg.llm.prompt_template;
    opts.concurrency = cfg.llm.concurrency;
    opts.log_path = log_path;
    ev = evaluate_llm(corpus, ep, opts);
  }
  json report = to_json(ev.metrics);
  report["transport_failures"] = ev.transport_failures;
  report["length_mismatches"] = ev.length_mismatches;
  report["log"] = log_path.string();
  const fs::path dest = ctx.args.report.empty() ? ctx.args.out / "llm_eval.json" : ctx.args.report;
  write_json(dest, report);
  write_manifest(ctx, {dest.string(), log_path.string()});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

template <typename T>
int cmd_correct(Context& ctx) {
  if (ctx.args.checkpoint.empty()) throw ConfigError("correct needs --checkpoint");
  const auto loaded = load_model<T>(ctx.args.checkpoint);
  fs::path pinyin = ctx.has_config ? ctx.cfg.data.pinyin : fs::path();
  fs::path glyphs = ctx.has_config ? ctx.cfg.data.glyphs : fs::path();
  if (pinyin.empty()) pinyin = loaded.meta.value("pinyin", "");
  if (glyphs.empty()) glyphs = loaded.meta.value("glyphs", "");
  const auto res = load_resources(require(pinyin, "data.pinyin"), require(glyphs, "data.glyphs"));
  const std::vector<std::u32string> input{utf8::decode(ctx.args.text)};
  const auto out = correct_sentences(loaded.model, input, loaded.vocab, res.table, res.atlas);
  std::cout << utf8::encode(out.front()) << '\n';
  return kExitOk;
}

template <typename T>
int dispatch(Context& ctx) {
  const auto& c = ctx.args.command;
  if (c == "prepare-data") return cmd_prepare(ctx);
  if (c == "pretrain-glyph") return cmd_pretrain_glyph<T>(ctx);
  if (c == "pretrain-mlm") return cmd_pretrain_mlm<T>(ctx);
  if (c == "train") return cmd_train<T>(ctx);
  if (c == "evaluate") return cmd_evaluate<T>(ctx);
  if (c == "macu") return cmd_macu<T>(ctx);
  if (c == "probe") return cmd_probe<T>(ctx);
  if (c == "llm-eval") return cmd_llm_eval(ctx);
  if (c == "correct") return cmd_correct<T>(ctx);
  throw ContractError("unhandled command " + c);
}

log::Level parse_level(const std::string& s) {
  if (s == "debug") return log::Level::debug;
  if (s == "info") return log::Level::info;
  if (s == "warn") return log::Level::warn;
  if (s == "error") return log::Level::error;
  return log::Level::off;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args) {
  Args a;
  CLI::App app{"NamBert multimodal Chinese spelling correction and MACU evaluation", "nambert"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--log-level", a.log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  struct Spec {
    const char* name;
    const char* help;
  };
  const Spec specs[] = {
      {"prepare-data", "validate resources, build confusion sets and synthesize train/test corpora"},
      {"pretrain-glyph", "pretrain the graphemic encoder on noisy character identification"},
      {"pretrain-mlm", "train the semantic-only masked-LM filter model"},
      {"train", "train NamBert with focal loss"},
      {"evaluate", "sentence-level precision/recall/F1 on the test corpus"},
      {"macu", "run the similarity-binned substitution protocol"},
      {"probe", "linear probes on frozen per-character features"},
      {"llm-eval", "score a chat-completions endpoint on the test corpus"},
      {"correct", "correct one sentence"},
  };
  for (const auto& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", a.config, "JSON run configuration");
    sub->add_option("--set", a.overrides, "override a config value, key.path=value")->take_all();
    sub->add_option("--out", a.out, "output directory")->capture_default_str();
    const std::string name = s.name;
    if (name == "train" || name == "evaluate" || name == "macu" || name == "probe" || name == "correct")
      sub->add_option("--checkpoint", a.checkpoint, "model checkpoint (default <out>/model.namb)");
    if (name == "macu") sub->add_option("--filter-checkpoint", a.filter_checkpoint, "masked-LM filter checkpoint");
    if (name == "evaluate" || name == "macu" || name == "probe" || name == "llm-eval")
      sub->add_option("--report", a.report, "report path");
    if (name == "llm-eval") sub->add_option("--replay", a.replay, "re-score an existing JSON-lines log");
    if (name == "correct") sub->add_option("--text", a.text, "sentence to correct")->required();
  }

  std::vector<std::string> reversed(raw_args.rbegin(), raw_args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  a.command = app.get_subcommands().front()->get_name();
  log::set_level(parse_level(a.log_level));

  Context ctx;
  ctx.args = a;
  if (a.config.empty() && a.command != "correct") {
    std::cerr << "error: --config is required for " << a.command << "\n\n" << app.get_subcommand(a.command)->help();
    return kExitUsage;
  }
  try {
    if (!a.config.empty()) {
      ctx.cfg = load_run_config(a.config, a.overrides);
      ctx.has_config = true;
    } else if (!a.overrides.empty()) {
      std::cerr << "error: --set needs --config\n";
      return kExitUsage;
    }
    fs::create_directories(a.out);
    const bool dbl = ctx.has_config && ctx.cfg.precision == "double";
    return dbl ? dispatch<double>(ctx) : dispatch<float>(ctx);
  } catch (const Error& e) {
    log::error(e.what());
    return kExitDomainError;
  } catch (const std::filesystem::filesystem_error& e) {
    log::error(e.what());
    return kExitDomainError;
  }
}

}  // namespace nambert
