#include "mock_endpoint.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

namespace mocktest {

namespace {

std::uint64_t prompt_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  // FNV low bits track character parity; a full avalanche round is needed
  // before the value is usable as a coin.
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

MockReply text_reply(std::string text) {
  MockReply r;
  r.text = std::move(text);
  return r;
}

std::string exemplar_choice(const rulex::PromptView& view, const std::string& prompt) {
  int best = -1;
  std::vector<std::string> labels;
  for (const auto& line : view.context) {
    const int overlap = (line.color == view.query_color) + (line.shape == view.query_shape);
    if (overlap > best) {
      best = overlap;
      labels.clear();
    }
    if (overlap == best && std::find(labels.begin(), labels.end(), line.label) == labels.end())
      labels.push_back(line.label);
  }
  if (labels.empty()) return "none";
  return labels[(prompt_hash(prompt) >> 32) % labels.size()];
}

// Label predicted by `feature` (0 color, 1 shape) when that feature maps the
// exposed lines to labels as a function and the query's value was seen.
std::optional<std::string> single_feature_label(const rulex::PromptView& view, int feature) {
  std::map<std::size_t, std::set<std::string>> by_value;
  for (const auto& line : view.context) by_value[feature == 0 ? line.color : line.shape].insert(line.label);
  for (const auto& [_, ls] : by_value)
    if (ls.size() != 1) return std::nullopt;
  auto it = by_value.find(feature == 0 ? view.query_color : view.query_shape);
  if (it == by_value.end()) return std::nullopt;
  return *it->second.begin();
}

}  // namespace

MockServer::MockServer(Behavior behavior, std::string required_token) : server_(std::make_unique<httplib::Server>()) {
  server_->Post("/v1/completions", [this, behavior = std::move(behavior), token = std::move(required_token)](
                                       const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    if (!token.empty() && req.get_header_value("Authorization") != "Bearer " + token) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const std::exception&) {
      res.status = 400;
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      models_.push_back(body.value("model", ""));
    }
    MockReply reply = behavior(body.value("prompt", ""));
    if (reply.delay_seconds > 0.0)
      std::this_thread::sleep_for(std::chrono::duration<double>(reply.delay_seconds));
    res.status = reply.status;
    if (!reply.body.empty()) {
      res.set_content(reply.body, "application/json");
    } else {
      nlohmann::json out = {{"id", "cmpl-mock"},
                            {"object", "text_completion"},
                            {"choices", {{{"text", reply.text}, {"index", 0}, {"finish_reason", "stop"}}}}};
      res.set_content(out.dump(), "application/json");
    }
  });
  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("mock server could not bind");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

MockServer::~MockServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::vector<std::string> MockServer::models_seen() const {
  std::lock_guard<std::mutex> lock(mu_);
  return models_;
}

Behavior exemplar_behavior(const rulex::LmVocab& vocab) {
  return [vocab](const std::string& prompt) {
    auto view = rulex::parse_prompt(vocab, prompt);
    if (!view) return text_reply(" I am not sure.");
    return text_reply(" " + exemplar_choice(*view, prompt) + "\n");
  };
}

Behavior rule_behavior(const rulex::LmVocab& vocab) {
  return [vocab](const std::string& prompt) {
    auto view = rulex::parse_prompt(vocab, prompt);
    if (!view) return text_reply(" I am not sure.");
    auto color = single_feature_label(*view, 0);
    auto shape = single_feature_label(*view, 1);
    if (color.has_value() != shape.has_value()) return text_reply(" " + (color ? *color : *shape) + "\n");
    return text_reply(" " + exemplar_choice(*view, prompt) + "\n");
  };
}

Behavior scripted_behavior(std::vector<MockReply> replies) {
  auto state = std::make_shared<std::pair<std::mutex, std::size_t>>();
  return [state, replies = std::move(replies)](const std::string&) {
    std::lock_guard<std::mutex> lock(state->first);
    const std::size_t i = std::min(state->second++, replies.size() - 1);
    return replies[i];
  };
}

rulex::EndpointConfig endpoint_for(const MockServer& server, const std::string& model) {
  rulex::EndpointConfig c;
  c.name = model;
  c.model = model;
  c.base_url = server.url();
  c.timeout_seconds = 5.0;
  c.backoff_initial_seconds = 0.01;
  c.backoff_max_seconds = 0.05;
  c.parallelism = 4;
  return c;
}

}  // namespace mocktest
