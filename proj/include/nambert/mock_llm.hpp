#pragma once

// Scripted local chat-completions server for tests and offline demos.

#include <functional>
#include <memory>
#include <string>
#include <thread>

namespace nambert {

struct MockReply {
  int status = 200;
  std::string content;   // message content for status 200, raw body otherwise
  int delay_ms = 0;
};

class MockChatServer {
 public:
  // The script sees the user message content of each request.
  using Script = std::function<MockReply(const std::string& prompt)>;

  explicit MockChatServer(Script script);
  ~MockChatServer();
  MockChatServer(const MockChatServer&) = delete;
  MockChatServer& operator=(const MockChatServer&) = delete;

  // Binds to 127.0.0.1 on a free port.
  void start();
  void stop();
  int port() const { return port_; }
  std::string base_url() const;
  std::size_t requests() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = -1;
};

// Pulls the sentence back out of a prompt built from the default template:
// the text after the last newline.
std::string last_line(const std::string& prompt);

}  // namespace nambert
