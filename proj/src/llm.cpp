#include "nambert/llm.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "nambert/error.hpp"
#include "nambert/log.hpp"
#include "nambert/utf8.hpp"

namespace nambert {

const std::string kDefaultPromptTemplate =
    "请纠正下面句子中的错别字。只输出纠正后的句子，字数必须与原句相同，不要添加任何解释。\n{sentence}";

std::string build_prompt(const std::u32string& sentence, const std::string& tmpl) {
  if (tmpl.empty()) throw ConfigError("prompt template is empty");
  const auto at = tmpl.find(kSentencePlaceholder);
  if (at == std::string::npos) throw ConfigError("prompt template has no {sentence} placeholder");
  if (sentence.empty()) throw InputError("cannot build a prompt for an empty sentence");
  std::string out = tmpl;
  const std::string s = utf8::encode(sentence);
  const std::string ph = kSentencePlaceholder;
  for (std::size_t pos = out.find(ph); pos != std::string::npos; pos = out.find(ph, pos + s.size()))
    out.replace(pos, ph.size(), s);
  return out;
}

LlmEndpoint endpoint_from_env(LlmEndpoint base) {
  if (const char* v = std::getenv("CSC_LLM_BASE_URL"); v && *v) base.base_url = v;
  if (const char* v = std::getenv("CSC_LLM_API_KEY"); v && *v) base.api_key = v;
  if (const char* v = std::getenv("CSC_LLM_MODEL"); v && *v) base.model = v;
  return base;
}

std::string to_string(LlmStatus s) {
  switch (s) {
    case LlmStatus::ok: return "ok";
    case LlmStatus::length_mismatch: return "length-mismatch";
    case LlmStatus::transport_error: return "transport-error";
    case LlmStatus::http_error: return "http-error";
    case LlmStatus::bad_response: return "bad-response";
  }
  return "ok";
}

LlmStatus parse_llm_status(const std::string& s) {
  for (auto st : {LlmStatus::ok, LlmStatus::length_mismatch, LlmStatus::transport_error, LlmStatus::http_error,
                  LlmStatus::bad_response})
    if (to_string(st) == s) return st;
  throw FormatError("unknown LLM status '" + s + "'");
}

std::string clean_response(const std::string& text) {
  std::u32string s;
  try {
    s = utf8::decode(text);
  } catch (const InputError&) {
    return text;
  }
  auto space = [](char32_t c) { return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'　' || c == U'﻿'; };
  static const std::pair<char32_t, char32_t> quotes[] = {
      {U'"', U'"'}, {U'\'', U'\''}, {U'“', U'”'}, {U'‘', U'’'}, {U'「', U'」'}, {U'`', U'`'}};
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    std::size_t a = 0, b = s.size();
    while (a < b && space(s[a])) ++a;
    while (b > a && space(s[b - 1])) --b;
    if (a != 0 || b != s.size()) {
      s = s.substr(a, b - a);
      changed = true;
    }
    for (auto [open, close] : quotes) {
      if (s.size() >= 2 && s.front() == open && s.back() == close) {
        s = s.substr(1, s.size() - 2);
        changed = true;
        break;
      }
    }
  }
  return utf8::encode(s);
}

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("LLM base URL needs a scheme: '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, slash);
  p.path_prefix = slash == std::string::npos ? "" : url.substr(slash);
  while (!p.path_prefix.empty() && p.path_prefix.back() == '/') p.path_prefix.pop_back();
  return p;
}

bool transient(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

LlmOutcome correct_via_llm(const std::u32string& sentence, const LlmEndpoint& endpoint, const std::string& tmpl) {
  LlmOutcome out;
  out.source = sentence;
  out.prediction = sentence;
  out.prompt = build_prompt(sentence, tmpl);

  ParsedUrl url;
  try {
    url = split_url(endpoint.base_url);
  } catch (const ConfigError& e) {
    out.status = LlmStatus::transport_error;
    out.error = e.what();
    return out;
  }
  const nlohmann::json body{{"model", endpoint.model},
                            {"temperature", 0},
                            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", out.prompt}}})}};
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);

  double wait = endpoint.backoff_s;
  for (int attempt = 0; attempt <= std::max(0, endpoint.retries); ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      wait *= 2;
    }
    out.attempts = attempt + 1;
    try {
      httplib::Client cli(url.scheme_host_port);
      const auto t = std::chrono::duration<double>(endpoint.timeout_s);
      cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      auto res = cli.Post(url.path_prefix + "/chat/completions", headers, payload, "application/json");
      if (!res) {
        out.status = LlmStatus::transport_error;
        out.error = httplib::to_string(res.error());
        continue;
      }
      out.http_status = res->status;
      if (res->status != 200) {
        out.status = LlmStatus::http_error;
        out.response = res->body;
        out.error = "HTTP " + std::to_string(res->status);
        if (transient(res->status)) continue;
        return out;
      }
      const auto reply = nlohmann::json::parse(res->body, nullptr, false);
      if (reply.is_discarded() || !reply.contains("choices") || !reply["choices"].is_array() ||
          reply["choices"].empty() || !reply["choices"][0].contains("message") ||
          !reply["choices"][0]["message"].contains("content") ||
          !reply["choices"][0]["message"]["content"].is_string()) {
        out.status = LlmStatus::bad_response;
        out.response = res->body;
        out.error = "reply lacks choices[0].message.content";
        return out;
      }
      out.response = reply["choices"][0]["message"]["content"].get<std::string>();
      std::u32string pred;
      try {
        pred = utf8::decode(clean_response(out.response));
      } catch (const InputError& e) {
        out.status = LlmStatus::bad_response;
        out.error = e.what();
        return out;
      }
      out.error.clear();
      if (pred.size() != sentence.size()) {
        out.status = LlmStatus::length_mismatch;
        out.prediction = pred;
        return out;
      }
      out.status = LlmStatus::ok;
      out.prediction = pred;
      return out;
    } catch (const std::exception& e) {
      out.status = LlmStatus::transport_error;
      out.error = e.what();
    }
  }
  return out;
}

LlmEvaluation score_outcomes(std::vector<LlmOutcome> outcomes) {
  LlmEvaluation ev;
  std::vector<ScoredSentence> rows;
  rows.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    ScoredSentence r{o.source, o.prediction, o.target, false};
    if (o.status == LlmStatus::length_mismatch) {
      r.forced_wrong = true;
      ++ev.length_mismatches;
    } else if (o.transport_failure()) {
      r.prediction = o.source;
      ++ev.transport_failures;
    }
    rows.push_back(std::move(r));
  }
  ev.metrics = sentence_metrics(rows);
  ev.outcomes = std::move(outcomes);
  return ev;
}

nlohmann::json to_json(const LlmOutcome& o) {
  return {{"index", o.index},
          {"source", utf8::encode(o.source)},
          {"target", utf8::encode(o.target)},
          {"prediction", utf8::encode(o.prediction)},
          {"prompt", o.prompt},
          {"response", o.response},
          {"status", to_string(o.status)},
          {"http_status", o.http_status},
          {"attempts", o.attempts},
          {"error", o.error}};
}

LlmOutcome llm_outcome_from_json(const nlohmann::json& j) {
  try {
    LlmOutcome o;
    o.index = j.at("index").get<std::size_t>();
    o.source = utf8::decode(j.at("source").get<std::string>());
    o.target = utf8::decode(j.at("target").get<std::string>());
    o.prediction = utf8::decode(j.at("prediction").get<std::string>());
    o.prompt = j.value("prompt", "");
    o.response = j.value("response", "");
    o.status = parse_llm_status(j.at("status").get<std::string>());
    o.http_status = j.value("http_status", 0);
    o.attempts = j.value("attempts", 0);
    o.error = j.value("error", "");
    return o;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad LLM log record: ") + e.what());
  }
}

LlmEvaluation evaluate_llm(std::span<const Example> corpus, const LlmEndpoint& endpoint, const LlmEvalOptions& opts) {
  // validates the template up front, before any thread starts
  if (!corpus.empty()) build_prompt(corpus.front().source, opts.prompt_template);
  std::vector<LlmOutcome> outcomes(corpus.size());
  std::ofstream log;
  if (!opts.log_path.empty()) {
    if (opts.log_path.has_parent_path()) std::filesystem::create_directories(opts.log_path.parent_path());
    log.open(opts.log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write LLM log " + opts.log_path.string());
  }
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < corpus.size(); i = next++) {
      LlmOutcome o;
      try {
        o = correct_via_llm(corpus[i].source, endpoint, opts.prompt_template);
      } catch (const Error& e) {
        o.source = o.prediction = corpus[i].source;
        o.status = LlmStatus::transport_error;
        o.error = e.what();
      }
      o.index = i;
      o.target = corpus[i].target;
      {
        std::lock_guard lock(log_mu);
        if (log.is_open()) log << to_json(o).dump() << '\n' << std::flush;
      }
      outcomes[i] = std::move(o);
    }
  };
  const int threads = std::max(1, std::min<int>(opts.concurrency, static_cast<int>(std::max<std::size_t>(1, corpus.size()))));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  auto ev = score_outcomes(std::move(outcomes));
  if (!corpus.empty() &&
      static_cast<double>(ev.transport_failures) > opts.max_failure_fraction * static_cast<double>(corpus.size())) {
    throw ProtocolError(std::to_string(ev.transport_failures) + " of " + std::to_string(corpus.size()) +
                        " LLM requests failed in transport; aborting");
  }
  return ev;
}

LlmEvaluation replay_llm_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read LLM log " + path.string());
  std::vector<LlmOutcome> outcomes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("LLM log line is not JSON", lineno);
    outcomes.push_back(llm_outcome_from_json(j));
  }
  std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  for (std::size_t i = 0; i < outcomes.size(); ++i)
    if (outcomes[i].index != i) throw FormatError("LLM log indices are not 0..n-1");
  return score_outcomes(std::move(outcomes));
}

}  // namespace nambert
