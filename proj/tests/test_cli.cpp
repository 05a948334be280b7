#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/cli.hpp"
#include "nambert/config.hpp"
#include "nambert/log.hpp"
#include "nambert/macu.hpp"
#include "nambert/metrics.hpp"
#include "nambert/utf8.hpp"
#include "test_util.hpp"

using namespace nambert;
namespace fs = std::filesystem;

namespace {

std::string toy_config() { return (testutil::source_dir() / "configs" / "toy.json").string(); }

// Runs the CLI in-process and captures stdout.
int run(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), {"--log-level", "error"});
  std::ostringstream buf;
  auto* old = std::cout.rdbuf(buf.rdbuf());
  const int code = run_cli(args);
  std::cout.rdbuf(old);
  log::set_level(log::Level::error);
  if (out) *out = buf.str();
  return code;
}

// Small, fast variant of the toy run.
std::vector<std::string> fast(const fs::path& out) {
  return {"--config", toy_config(), "--out", out.string(), "--set", "model.d_s=16", "model.layers=1",
          "model.glyph_hidden=[32,16]", "model.d_g=8", "train.epochs=2", "glyph_pretrain.epochs=1", "mlm.epochs=1",
          "macu.filter_sentences=5", "probe.epochs=5"};
}

std::vector<std::string> cmd(const std::string& name, const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{name};
  for (auto& x : extra) a.push_back(std::move(x));
  for (auto& x : fast(out)) a.push_back(std::move(x));
  return a;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config loading") {
  const auto dir = testutil::temp_dir("config");
  auto doc = nlohmann::json::parse(bytes(toy_config()));
  SUBCASE("paths resolve against the config file") {
    const auto c = load_run_config(toy_config());
    CHECK(c.data.pinyin.is_absolute());
    CHECK(fs::exists(c.data.pinyin));
    CHECK(c.seed == 7);
  }
  SUBCASE("overrides") {
    const auto c = load_run_config(toy_config(), {"train.epochs=3", "seed=11", "ablation.align=true"});
    CHECK(c.train.epochs == 3);
    CHECK(c.seed == 11);
    CHECK(c.model.fusion == FusionMode::align);
    CHECK(config_hash(c) != config_hash(load_run_config(toy_config())));
    CHECK(config_hash(load_run_config(toy_config())) == config_hash(load_run_config(toy_config())));
    CHECK_THROWS_AS(load_run_config(toy_config(), {"ablation.align=true", "ablation.front_fusion=true"}), ConfigError);
    CHECK_THROWS_AS(load_run_config(toy_config(), {"no-equals-sign"}), ConfigError);
  }
  SUBCASE("unknown keys and secrets are rejected") {
    doc["train"]["epoch"] = 3;
    CHECK_THROWS_AS(parse_run_config(doc, dir), ConfigError);
    doc["train"].erase("epoch");
    doc["llm"]["api_key"] = "sk-should-not-be-here";
    CHECK_THROWS_AS(parse_run_config(doc, dir), ConfigError);
  }
  SUBCASE("prompt template survives a file round trip byte for byte") {
    const std::string tmpl = "请改正错别字，只输出句子：\n\t{sentence}\n";
    doc["llm"]["prompt_template"] = tmpl;
    std::ofstream(dir / "c.json") << doc.dump(2);
    CHECK(load_run_config(dir / "c.json").llm.prompt_template == tmpl);
    doc["llm"]["prompt_template"] = "";
    std::ofstream(dir / "d.json") << doc.dump(2);
    CHECK_THROWS_AS(load_run_config(dir / "d.json"), ConfigError);
  }
}

TEST_CASE("usage errors") {
  CHECK(run({"train"}) == kExitUsage);
  CHECK(run({"evaluate", "--out", "x"}) == kExitUsage);
  CHECK(run({"frobnicate"}) == kExitUsage);
  CHECK(run({"train", "--config", toy_config(), "--bogus-flag"}) == kExitUsage);
  CHECK(run({"correct", "--checkpoint", "m.namb"}) == kExitUsage);
  CHECK(run({}) == kExitUsage);
  CHECK(run({"train", "--config", "/nonexistent/config.json"}) == kExitDomainError);
}

TEST_CASE("command pipeline") {
  const auto out = testutil::temp_dir("cli");
  REQUIRE(run(cmd("prepare-data", out)) == kExitOk);
  CHECK(fs::exists(out / "train.tsv"));
  CHECK(fs::exists(out / "test.tsv"));
  CHECK(fs::exists(out / "manifest-prepare-data.json"));

  REQUIRE(run(cmd("pretrain-glyph", out)) == kExitOk);
  REQUIRE(run(cmd("train", out)) == kExitOk);
  CHECK(fs::exists(out / "model.namb"));
  REQUIRE(run(cmd("evaluate", out)) == kExitOk);
  CHECK(check_metrics_report(read_json(out / "eval.json")).empty());

  SUBCASE("correct prints a sentence of the input's length") {
    std::string printed;
    REQUIRE(run({"correct", "--checkpoint", (out / "model.namb").string(), "--text", "我受中国"}, &printed) ==
            kExitOk);
    while (!printed.empty() && printed.back() == '\n') printed.pop_back();
    CHECK(utf8::decode(printed).size() == 4);
  }
  SUBCASE("macu report validates") {
    REQUIRE(run(cmd("macu", out, {"--report", (out / "r.json").string()})) == kExitOk);
    const auto r = read_json(out / "r.json");
    for (const char* kind : {"phonetic", "graphemic"}) {
      const auto problems = check_macu_report(r.at(kind));
      for (const auto& p : problems) MESSAGE(p);
      CHECK(problems.empty());
    }
    const auto manifest = read_json(out / "manifest-macu.json");
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
  }
  SUBCASE("probe") {
    REQUIRE(run(cmd("probe", out)) == kExitOk);
    CHECK(fs::exists(out / "probe.json"));
  }
  SUBCASE("identical config and seed reproduce the checkpoint") {
    const auto again = testutil::temp_dir("cli-again");
    REQUIRE(run(cmd("prepare-data", again)) == kExitOk);
    REQUIRE(run(cmd("pretrain-glyph", again)) == kExitOk);
    REQUIRE(run(cmd("train", again)) == kExitOk);
    CHECK(bytes(again / "train.tsv") == bytes(out / "train.tsv"));
    CHECK(bytes(again / "glyph.namb") == bytes(out / "glyph.namb"));
    CHECK(bytes(again / "model.namb") == bytes(out / "model.namb"));
  }
}
