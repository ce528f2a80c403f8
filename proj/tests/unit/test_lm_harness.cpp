#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mock_endpoint.hpp"
#include "rulex/error.hpp"
#include "rulex/lm_harness.hpp"

using namespace rulex;
namespace fs = std::filesystem;

namespace {
// red circle: dax / red square: dax / blue square: wug, query blue circle.
TextEpisode hand_built() {
  TextEpisode ep;
  ep.condition = LmCondition::ColorPredictive;
  ep.context = {{0, 0, 0}, {0, 1, 0}, {1, 1, 1}};
  ep.query_color = 1;
  ep.query_shape = 0;
  ep.label_words = {0, 1, 2};
  return ep;
}

mocktest::MockReply status_only(int status) {
  mocktest::MockReply r;
  r.status = status;
  return r;
}

mocktest::MockReply raw_body(std::string body) {
  mocktest::MockReply r;
  r.body = std::move(body);
  return r;
}

mocktest::MockReply completion(std::string text, double delay = 0.0) {
  mocktest::MockReply r;
  r.text = std::move(text);
  r.delay_seconds = delay;
  return r;
}

std::vector<std::string> label_column(const std::string& prompt) {
  std::vector<std::string> out;
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.rfind(':');
    out.push_back(line.substr(colon + 1));
  }
  return out;
}
}  // namespace

TEST_CASE("builtin vocabulary is valid and matches the shipped file") {
  auto v = LmVocab::builtin();
  CHECK_NOTHROW(v.validate());
  CHECK(v.colors.size() >= 3);
  CHECK(v.shapes.size() >= 3);
  CHECK(v.labels.size() >= 3);
  const fs::path shipped = fs::path(RULEX_SOURCE_DIR) / "data" / "lm_vocab.json";
  REQUIRE(fs::exists(shipped));
  CHECK(LmVocab::load(shipped).to_json() == v.to_json());
  CHECK(LmVocab::from_json(v.to_json()).to_json() == v.to_json());

  auto clash = v;
  clash.labels[0] = "red";
  CHECK_THROWS_AS(clash.validate(), Error);
  auto few = v;
  few.labels.resize(2);
  CHECK_THROWS_AS(few.validate(), Error);
}

TEST_CASE("prompt formats") {
  auto v = LmVocab::builtin();
  CHECK(render_phrase(v, 0, 0, 1) == "red circle");
  CHECK(render_phrase(v, 0, 0, 2) == "a circle that is red");
  CHECK(render_phrase(v, 1, 4, 2) == "an oval that is blue");
  CHECK(render_phrase(v, 0, 0, 3) == "an object that is circular and red");
  CHECK(render_phrase(v, 0, 0, 4) == "an object that is red and circular");
  CHECK_THROWS_AS(render_phrase(v, 0, 0, 5), Error);
  CHECK_THROWS_AS(render_phrase(v, 99, 0, 1), Error);

  auto ep = hand_built();
  CHECK(render_prompt(v, ep, 1) == "red circle: dax\nred square: dax\nblue square: wug\nblue circle:");
  CHECK(ep.color_label() == 1);
  CHECK(ep.shape_label() == 0);
}

TEST_CASE("all formats share the label column and parse back") {
  auto v = LmVocab::builtin();
  for (auto cond : {LmCondition::ShapePredictive, LmCondition::ColorPredictive, LmCondition::Control}) {
    for (std::uint64_t i = 0; i < 20; ++i) {
      auto ep = make_text_episode(v, cond, 11, i);
      const auto reference = label_column(render_prompt(v, ep, 1));
      for (int f : kPromptFormats) {
        const auto prompt = render_prompt(v, ep, f);
        CHECK(prompt == render_prompt(v, ep, f));
        CHECK(label_column(prompt) == reference);
        CHECK(prompt.back() == ':');
        auto view = parse_prompt(v, prompt);
        REQUIRE(view.has_value());
        REQUIRE(view->context.size() == ep.context.size());
        for (std::size_t k = 0; k < ep.context.size(); ++k) {
          CHECK(view->context[k].color == ep.context[k].color);
          CHECK(view->context[k].shape == ep.context[k].shape);
          CHECK(view->context[k].label == v.labels[ep.label_words[ep.context[k].label]]);
        }
        CHECK(view->query_color == ep.query_color);
        CHECK(view->query_shape == ep.query_shape);
      }
    }
  }
  CHECK_FALSE(parse_prompt(v, "nothing to see here").has_value());
}

TEST_CASE("text episodes follow the partial-exposure structure") {
  auto v = LmVocab::builtin();
  for (std::uint64_t i = 0; i < 200; ++i) {
    for (auto cond : {LmCondition::ShapePredictive, LmCondition::ColorPredictive, LmCondition::Control}) {
      auto ep = make_text_episode(v, cond, 2, i);
      CHECK(ep.context.size() == 12);
      std::set<std::size_t> words(ep.label_words.begin(), ep.label_words.end());
      CHECK(words.size() == 3);
      // The query combination is never shown, but each of its features is.
      bool color_seen = false, shape_seen = false;
      for (const auto& it : ep.context) {
        CHECK_FALSE((it.color == ep.query_color && it.shape == ep.query_shape));
        color_seen = color_seen || it.color == ep.query_color;
        shape_seen = shape_seen || it.shape == ep.query_shape;
      }
      CHECK(color_seen);
      CHECK(shape_seen);
      if (cond == LmCondition::Control) {
        CHECK(ep.color_label() != ep.shape_label());
      } else {
        // The predictive feature's label is the one the rule gives.
        const auto rule_label = cond == LmCondition::ShapePredictive ? ep.shape_label() : ep.color_label();
        CHECK(rule_label == ep.spec.label_b);
        const auto other_label = cond == LmCondition::ShapePredictive ? ep.color_label() : ep.shape_label();
        CHECK(other_label == ep.spec.label_a);
      }
    }
    // Control episodes drop the bridging combination: no context item pairs
    // the query's color with a shape that also appears with another label.
    auto ctl = make_text_episode(v, LmCondition::Control, 2, i);
    std::set<std::pair<std::size_t, std::size_t>> combos;
    for (const auto& it : ctl.context)
      if (it.label != ctl.spec.label_extra) combos.insert({it.color, it.shape});
    CHECK(combos.size() == 2);
  }
  CHECK(make_text_episode(v, LmCondition::Control, 2, 5).context.size() == 12);
}

TEST_CASE("completion parsing") {
  auto v = LmVocab::builtin();
  auto ep = hand_built();
  CHECK(first_word("  wug dax") == "wug");
  CHECK(first_word(" dax.") == "dax");
  CHECK(first_word("\n\"Fep\"") == "fep");
  CHECK(first_word("...") == "");
  CHECK(parse_completion(v, ep, " wug").category == TextCategory::ColorConsistent);
  CHECK(parse_completion(v, ep, " dax.").category == TextCategory::ShapeConsistent);
  CHECK(parse_completion(v, ep, "Dax").category == TextCategory::ShapeConsistent);
  CHECK(parse_completion(v, ep, "wug dax").category == TextCategory::ColorConsistent);
  auto banana = parse_completion(v, ep, "banana");
  CHECK(banana.category == TextCategory::Other);
  CHECK_FALSE(banana.empty);
  auto blank = parse_completion(v, ep, "   ");
  CHECK(blank.empty);
  CHECK(blank.category == TextCategory::Other);
  CHECK(parse_completion(v, ep, "fep").category == TextCategory::Other);
}

TEST_CASE("categories are equivariant under label-word permutation") {
  auto v = LmVocab::builtin();
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto ep = make_text_episode(v, LmCondition::ShapePredictive, 8, i);
    auto swapped = ep;
    swapped.label_words = {(ep.label_words[0] + 5) % v.labels.size(), (ep.label_words[1] + 5) % v.labels.size(),
                           (ep.label_words[2] + 5) % v.labels.size()};
    for (std::size_t l = 0; l < 3; ++l) {
      auto a = parse_completion(v, ep, v.labels[ep.label_words[l]]);
      auto b = parse_completion(v, swapped, v.labels[swapped.label_words[l]]);
      CHECK(a.category == b.category);
    }
  }
}

TEST_CASE("endpoint configuration") {
  nlohmann::json j = {{"base_url", "http://localhost:9"}, {"model", "m"}, {"token_env", "RX_TOKEN"}};
  auto c = EndpointConfig::from_json(j);
  CHECK(c.name == "m");
  CHECK(c.token_env == "RX_TOKEN");
  CHECK(EndpointConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(EndpointConfig::from_json({{"base_url", "http://x"}, {"model", "m"}, {"token", "secret"}}), Error);
  CHECK_THROWS_AS(EndpointConfig::from_json({{"base_url", "ftp://x"}, {"model", "m"}}), Error);
  CHECK_THROWS_AS(EndpointConfig::from_json({{"base_url", "http://x"}}), Error);

  auto req = completion_request(c, "hello:");
  CHECK(req.at("model") == "m");
  CHECK(req.at("prompt") == "hello:");
  CHECK(req.at("temperature") == 0.0);
  CHECK(req.at("max_tokens") == 8);
  CHECK(completion_text({{"choices", {{{"text", " dax"}}}}}) == std::optional<std::string>(" dax"));
  CHECK_FALSE(completion_text({{"choices", nlohmann::json::array()}}).has_value());
  CHECK_FALSE(completion_text({{"text", "x"}}).has_value());

  auto dir = fs::temp_directory_path() / "rulex_endpoints";
  fs::create_directories(dir);
  std::ofstream(dir / "one.json") << j.dump();
  std::ofstream(dir / "many.json") << nlohmann::json{{"endpoints", {j, j}}}.dump();
  CHECK(load_endpoint_configs(dir / "one.json").size() == 1);
  CHECK(load_endpoint_configs(dir / "many.json").size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("the bearer token comes from the named environment variable") {
  mocktest::MockServer server([](const std::string&) { return completion(" dax"); }, "s3cret");
  auto cfg = mocktest::endpoint_for(server);
  cfg.token_env = "RULEX_TEST_TOKEN_UNSET";
  ::unsetenv("RULEX_TEST_TOKEN_UNSET");
  try {
    CompletionClient bad(cfg);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("RULEX_TEST_TOKEN_UNSET") != std::string::npos);
  }

  cfg.token_env = "RULEX_TEST_TOKEN";
  ::setenv("RULEX_TEST_TOKEN", "wrong", 1);
  auto denied = CompletionClient(cfg).complete("x:");
  CHECK(denied.status == QueryStatus::AuthFailure);
  CHECK(denied.attempts == 1);
  CHECK(denied.http_status == 401);

  ::setenv("RULEX_TEST_TOKEN", "s3cret", 1);
  auto ok = CompletionClient(cfg).complete("x:");
  CHECK(ok.ok());
  CHECK(ok.text == " dax");
  ::unsetenv("RULEX_TEST_TOKEN");
  CHECK(server.models_seen().back() == "mock");
}

TEST_CASE("rate limits are retried with backoff") {
  mocktest::MockServer server(mocktest::scripted_behavior({status_only(429), status_only(429), completion(" wug")}));
  auto r = CompletionClient(mocktest::endpoint_for(server)).complete("q:");
  CHECK(r.ok());
  CHECK(r.text == " wug");
  CHECK(r.attempts == 3);
  CHECK(server.requests() == 3);

  mocktest::MockServer always(mocktest::scripted_behavior({status_only(503)}));
  auto cfg = mocktest::endpoint_for(always);
  cfg.max_retries = 2;
  auto bad = CompletionClient(cfg).complete("q:");
  CHECK(bad.status == QueryStatus::HttpError);
  CHECK(bad.http_status == 503);
  CHECK(bad.attempts == 3);

  mocktest::MockServer not_found(mocktest::scripted_behavior({status_only(404)}));
  auto nf = CompletionClient(mocktest::endpoint_for(not_found)).complete("q:");
  CHECK(nf.status == QueryStatus::HttpError);
  CHECK(nf.attempts == 1);
}

TEST_CASE("timeouts, malformed bodies and refused connections") {
  mocktest::MockServer slow(mocktest::scripted_behavior({completion(" dax", 1.5)}));
  auto cfg = mocktest::endpoint_for(slow);
  cfg.timeout_seconds = 0.3;
  cfg.max_retries = 1;
  auto t = CompletionClient(cfg).complete("q:");
  CHECK(t.status == QueryStatus::Timeout);
  CHECK(t.attempts == 2);

  mocktest::MockServer garbled(mocktest::scripted_behavior({raw_body("{\"choices\": 5}")}));
  auto m = CompletionClient(mocktest::endpoint_for(garbled)).complete("q:");
  CHECK(m.status == QueryStatus::Malformed);
  mocktest::MockServer html(mocktest::scripted_behavior({raw_body("<html>")}));
  CHECK(CompletionClient(mocktest::endpoint_for(html)).complete("q:").status == QueryStatus::Malformed);

  EndpointConfig nowhere;
  nowhere.base_url = "http://127.0.0.1:1";
  nowhere.model = "m";
  nowhere.max_retries = 1;
  nowhere.backoff_initial_seconds = 0.01;
  nowhere.timeout_seconds = 2;
  auto c = CompletionClient(nowhere).complete("q:");
  CHECK(c.status == QueryStatus::ConnectionError);
  CHECK(c.attempts == 2);
}

TEST_CASE("failed queries are counted, excluded, and can invalidate a run") {
  auto v = LmVocab::builtin();
  LmRunOptions opts;
  opts.episodes = 10;
  opts.formats = {1, 2};
  std::size_t calls = 0;
  std::mutex mu;
  // Every third query fails.
  auto flaky = [&](const std::string&) {
    std::lock_guard<std::mutex> lock(mu);
    QueryResult r;
    r.attempts = 1;
    if (calls++ % 3 == 0) {
      r.status = QueryStatus::Timeout;
      r.error = "timeout";
    } else {
      r.text = " dax";
    }
    return r;
  };
  auto res = run_condition(v, LmCondition::ColorPredictive, opts, flaky, 1, "flaky");
  CHECK(res.attempted == 20);
  CHECK(res.failed == 7);
  CHECK(res.failures_by_status.at("timeout") == 7);
  CHECK(res.pooled.n() == 13);
  CHECK_FALSE(res.invalid);
  CHECK(res.per_format.at(1).n() + res.per_format.at(2).n() == 13);

  auto dead = [](const std::string&) {
    QueryResult r;
    r.status = QueryStatus::ConnectionError;
    r.attempts = 4;
    return r;
  };
  auto gone = run_condition(v, LmCondition::Control, opts, dead, 2, "dead");
  CHECK(gone.invalid);
  CHECK(gone.pooled.n() == 0);
  std::map<LmCondition, ConditionResult> conds{{LmCondition::ColorPredictive, res}, {LmCondition::Control, gone}};
  auto summary = summarize_model("x", conds);
  CHECK(summary.invalid);
  CHECK_FALSE(summary.color.has_value());

  auto path = fs::temp_directory_path() / "rulex_transcript.jsonl";
  fs::remove(path);
  append_transcript(path, res.records);
  append_transcript(path, gone.records);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0, errors = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    ++lines;
    CHECK(j.contains("prompt"));
    CHECK(j.contains("status"));
    errors += j.contains("error");
  }
  CHECK(lines == 40);
  CHECK(errors == 27);
  fs::remove(path);
}

TEST_CASE("results do not depend on parallelism or completion order") {
  auto v = LmVocab::builtin();
  mocktest::MockServer server(mocktest::exemplar_behavior(v));
  auto cfg = mocktest::endpoint_for(server);
  LmRunOptions opts;
  opts.episodes = 25;
  cfg.parallelism = 1;
  auto serial = run_condition(v, cfg, LmCondition::ShapePredictive, opts);
  cfg.parallelism = 4;
  auto parallel = run_condition(v, cfg, LmCondition::ShapePredictive, opts);
  CHECK(to_json(serial).dump() == to_json(parallel).dump());
  REQUIRE(serial.records.size() == parallel.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i)
    CHECK(serial.records[i].to_json().dump() == parallel.records[i].to_json().dump());
  CHECK(server.requests() == 2 * 25 * 4);
}

TEST_CASE("mock models produce the expected ruleness") {
  auto v = LmVocab::builtin();
  LmRunOptions opts;
  opts.episodes = 150;
  opts.seed = 4;
  auto run = [&](const mocktest::Behavior& b) {
    std::map<LmCondition, ConditionResult> conds;
    for (auto c : {LmCondition::ShapePredictive, LmCondition::ColorPredictive, LmCondition::Control}) {
      auto direct = [&](const std::string& prompt) {
        QueryResult r;
        r.attempts = 1;
        auto reply = b(prompt);
        r.text = reply.text;
        return r;
      };
      conds[c] = run_condition(v, c, opts, direct, 1, "mock");
    }
    return summarize_model("mock", conds);
  };
  auto ex = run(mocktest::exemplar_behavior(v));
  REQUIRE(ex.shape.has_value());
  REQUIRE(ex.color.has_value());
  CHECK(std::abs(ex.shape->ruleness) < ex.shape->halfwidth + 0.02);
  CHECK(std::abs(ex.color->ruleness) < ex.color->halfwidth + 0.02);
  CHECK(ex.conditions.at(LmCondition::Control).pooled.other == 0);

  auto rule = run(mocktest::rule_behavior(v));
  REQUIRE(rule.shape.has_value());
  const auto& partial = rule.conditions.at(LmCondition::ShapePredictive).pooled;
  CHECK(partial.shape == partial.n());
  const double control_rate = rule.conditions.at(LmCondition::Control).pooled.frequency(TextCategory::ShapeConsistent);
  CHECK(rule.shape->ruleness == doctest::Approx(1.0 - control_rate));
  CHECK(rule.shape->ruleness > 0.3);
}
