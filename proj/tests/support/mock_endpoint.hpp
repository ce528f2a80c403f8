#pragma once

// Local HTTP completion endpoints for harness tests. Each server speaks the
// completions wire shape on 127.0.0.1 with an ephemeral port.

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "rulex/lm_harness.hpp"

namespace httplib {
class Server;
}

namespace mocktest {

struct MockReply {
  int status = 200;
  std::string body;      // raw body; when empty, a completion with `text`
  std::string text;
  double delay_seconds = 0.0;
};

using Behavior = std::function<MockReply(const std::string& prompt)>;

class MockServer {
 public:
  // When `required_token` is non-empty, requests without the matching bearer
  // token get 401.
  explicit MockServer(Behavior behavior, std::string required_token = {});
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  std::string url() const;
  std::size_t requests() const { return requests_.load(); }
  std::vector<std::string> models_seen() const;

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
  mutable std::mutex mu_;
  std::vector<std::string> models_;
};

// Nearest exemplar by count of shared surface features (color, shape); ties
// between differently labelled exemplars go to a coin keyed on the prompt.
Behavior exemplar_behavior(const rulex::LmVocab& vocab);

// Single-feature rule when exactly one feature determines the labels of the
// exposed combinations; otherwise falls back to exemplar behavior.
Behavior rule_behavior(const rulex::LmVocab& vocab);

// Replies in order, repeating the last one.
Behavior scripted_behavior(std::vector<MockReply> replies);

rulex::EndpointConfig endpoint_for(const MockServer& server, const std::string& model = "mock");

}  // namespace mocktest
