#include "nambert/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "nambert/error.hpp"

namespace nambert {

using nlohmann::json;

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

namespace {

// Reads known keys from one object and rejects the rest.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    obj_ = &doc;
  }
  ~Section() noexcept(false) {
    if (!obj_ || std::uncaught_exceptions()) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + qualified(k) + "'");
    }
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    try {
      out = obj_->at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }
  void path(const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
    std::string s;
    read(key, s);
    if (!s.empty()) out = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
  }
  const json& child(const char* key) {
    seen_.insert(key);
    static const json null;
    return obj_ && obj_->contains(key) ? obj_->at(key) : null;
  }

 private:
  std::string qualified(const std::string& k) const { return name_.empty() ? k : name_ + "." + k; }
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.effective = doc;
  Section root(doc, "");
  root.read("seed", c.seed);
  root.read("precision", c.precision);
  if (c.precision != "float" && c.precision != "double") throw ConfigError("precision must be \"float\" or \"double\"");
  root.child("description");  // free text

  {
    Section s(root.child("data"), "data");
    s.path("pinyin", c.data.pinyin, base_dir);
    s.path("glyphs", c.data.glyphs, base_dir);
    s.path("clean_train", c.data.clean_train, base_dir);
    s.path("clean_test", c.data.clean_test, base_dir);
    s.path("train", c.data.train, base_dir);
    s.path("test", c.data.test, base_dir);
  }
  {
    Section s(root.child("prepare"), "prepare");
    s.read("error_rate", c.prepare.error_rate);
    s.read("min_similarity", c.prepare.min_similarity);
    s.read("holdout_fraction", c.prepare.holdout_fraction);
  }
  {
    Section s(root.child("confusion"), "confusion");
    s.read("tau_p", c.confusion.tau_p);
    s.read("tau_g", c.confusion.tau_g);
  }
  {
    Section s(root.child("model"), "model");
    auto& m = c.model;
    s.read("d_s", m.d_s);
    s.read("d_p", m.d_p);
    s.read("d_g", m.d_g);
    s.read("layers", m.layers);
    s.read("heads", m.heads);
    s.read("max_seq", m.max_seq);
    s.read("ffn_mult", m.ffn_mult);
    s.read("glyph_hidden", m.glyph_hidden);
    s.read("gamma", m.gamma);
    s.read("alpha_keep", m.alpha_keep);
    s.read("alpha_other", m.alpha_other);
    s.read("multimodal", m.multimodal);
    std::string fusion = to_string(m.fusion);
    s.read("fusion", fusion);
    m.fusion = parse_fusion_mode(fusion);
  }
  c.train.seed = c.seed;
  c.glyph.seed = c.seed;
  c.mlm.seed = c.seed;
  {
    Section s(root.child("train"), "train");
    auto& t = c.train;
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("lr", t.optim.lr);
    s.read("beta1", t.optim.beta1);
    s.read("beta2", t.optim.beta2);
    s.read("eps", t.optim.eps);
    s.read("grad_clip", t.optim.grad_clip);
    std::string kind = nn::to_string(t.optim.kind);
    s.read("optimizer", kind);
    t.optim.kind = nn::parse_optimizer_kind(kind);
    s.read("focal", t.focal);
    s.read("unk_dropout", t.unk_dropout);
    s.read("stop_at_train_f1", t.stop_at_train_f1);
    s.read("seed", t.seed);
  }
  {
    Section s(root.child("ablation"), "ablation");
    s.read("no_multimodal", c.ablation.no_multimodal);
    s.read("no_focal", c.ablation.no_focal);
    s.read("front_fusion", c.ablation.front_fusion);
    s.read("align", c.ablation.align);
  }
  {
    Section s(root.child("glyph_pretrain"), "glyph_pretrain");
    s.read("epochs", c.glyph.epochs);
    s.read("batch_size", c.glyph.batch_size);
    s.read("lr", c.glyph.lr);
    s.read("flip_prob", c.glyph.flip_prob);
    s.read("seed", c.glyph.seed);
  }
  {
    Section s(root.child("mlm"), "mlm");
    s.read("epochs", c.mlm.epochs);
    s.read("batch_size", c.mlm.batch_size);
    s.read("lr", c.mlm.lr);
    s.read("mask_rate", c.mlm.mask_rate);
    s.read("seed", c.mlm.seed);
  }
  {
    Section s(root.child("macu"), "macu");
    s.read("filter_sentences", c.macu.filter_sentences);
    s.read("kind", c.macu.kind);
    s.read("batch_size", c.macu.batch_size);
    if (c.macu.kind != "phonetic" && c.macu.kind != "graphemic" && c.macu.kind != "both")
      throw ConfigError("macu.kind must be phonetic, graphemic or both");
  }
  {
    Section s(root.child("probe"), "probe");
    s.read("test_fraction", c.probe.test_fraction);
    s.read("glyph_clusters", c.probe.glyph_clusters);
    s.read("epochs", c.probe.epochs);
    s.read("lr", c.probe.lr);
  }
  {
    Section s(root.child("llm"), "llm");
    s.read("base_url", c.llm.endpoint.base_url);
    s.read("model", c.llm.endpoint.model);
    s.read("timeout_s", c.llm.endpoint.timeout_s);
    s.read("retries", c.llm.endpoint.retries);
    s.read("backoff_s", c.llm.endpoint.backoff_s);
    s.read("prompt_template", c.llm.prompt_template);
    s.read("concurrency", c.llm.concurrency);
    s.read("limit", c.llm.limit);
    s.path("replay", c.llm.replay, base_dir);
    if (c.llm.prompt_template.empty()) throw ConfigError("llm.prompt_template is empty");
  }
  apply_ablation(c.ablation, c.model, c.train);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc, std::filesystem::absolute(path).parent_path());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(cfg.effective.dump())));
  return buf;
}

}  // namespace nambert
