#include "nambert/mock_llm.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>

#include <nlohmann/json.hpp>

#include "nambert/error.hpp"

namespace nambert {

struct MockChatServer::Impl {
  httplib::Server server;
  std::thread thread;
  std::atomic<std::size_t> requests{0};
};

MockChatServer::MockChatServer(Script script) : impl_(std::make_unique<Impl>()) {
  impl_->server.Post(R"(.*/chat/completions)", [this, script](const httplib::Request& req, httplib::Response& res) {
    ++impl_->requests;
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    std::string prompt;
    if (!body.is_discarded() && body.contains("messages") && body["messages"].is_array() && !body["messages"].empty())
      prompt = body["messages"].back().value("content", "");
    const MockReply reply = script(prompt);
    if (reply.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(reply.delay_ms));
    res.status = reply.status;
    if (reply.status != 200) {
      res.set_content(reply.content, "text/plain");
      return;
    }
    const nlohmann::json out{
        {"object", "chat.completion"},
        {"choices", nlohmann::json::array(
                        {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply.content}}}}})}};
    res.set_content(out.dump(), "application/json");
  });
}

MockChatServer::~MockChatServer() { stop(); }

void MockChatServer::start() {
  if (impl_->thread.joinable()) return;
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw IoError("mock server could not bind a port");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockChatServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

std::string MockChatServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

std::size_t MockChatServer::requests() const { return impl_->requests.load(); }

std::string last_line(const std::string& prompt) {
  const auto nl = prompt.rfind('\n');
  return nl == std::string::npos ? prompt : prompt.substr(nl + 1);
}

}  // namespace nambert
