#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rulex/metrics.hpp"
#include "rulex/stimulus.hpp"

namespace rulex {

struct ShapeWord {
  std::string noun;       // "circle"
  std::string adjective;  // "circular"
};

// Feature and label words for text episodes. Label words must not collide
// with any color or shape word; validate() enforces this.
struct LmVocab {
  std::vector<std::string> colors;
  std::vector<ShapeWord> shapes;
  std::vector<std::string> labels;

  static LmVocab builtin();
  static LmVocab from_json(const nlohmann::json& j);
  static LmVocab load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

enum class LmCondition { ShapePredictive, ColorPredictive, Control };

std::string to_string(LmCondition c);
LmCondition lm_condition_from_string(const std::string& s);

// Stimulus phrasing. 1: "red circle", 2: "a circle that is red",
// 3: "an object that is circular and red", 4: "an object that is red and circular".
inline constexpr std::array<int, 4> kPromptFormats = {1, 2, 3, 4};

struct TextItem {
  std::size_t color = 0;
  std::size_t shape = 0;
  std::size_t label = 0;  // index into TextEpisode::label_words
};

struct TextEpisode {
  LmCondition condition = LmCondition::Control;
  PartialExposureSpec spec;  // slot 1 is the predictive feature
  std::vector<TextItem> context;
  std::size_t query_color = 0;
  std::size_t query_shape = 0;
  std::array<std::size_t, 3> label_words{};  // vocab label index per label id

  // Label id carried by the context items that share the query's color
  // (resp. shape). Unique by construction.
  std::size_t color_label() const;
  std::size_t shape_label() const;
};

// Composition follows the synthetic partial-exposure/control builders: the
// spec's slot 1 maps to color for color-predictive and control episodes and
// to shape for shape-predictive ones. Context order is shuffled.
TextEpisode make_text_episode(const LmVocab& vocab, LmCondition condition, std::uint64_t seed, std::uint64_t index);

std::string render_phrase(const LmVocab& vocab, std::size_t color, std::size_t shape, int format);

// One "<phrase>: <label>\n" line per context item followed by
// "<query phrase>:" with no trailing newline.
std::string render_prompt(const LmVocab& vocab, const TextEpisode& ep, int format);

// Inverse of render_prompt, for scripted endpoints that need the episode
// structure back from the text. Returns nullopt when the text does not parse.
struct PromptView {
  struct Line {
    std::size_t color = 0;
    std::size_t shape = 0;
    std::string label;
  };
  std::vector<Line> context;
  std::size_t query_color = 0;
  std::size_t query_shape = 0;
};
std::optional<PromptView> parse_prompt(const LmVocab& vocab, const std::string& prompt);

enum class TextCategory { ColorConsistent, ShapeConsistent, Other };
std::string to_string(TextCategory c);

struct ParsedCompletion {
  std::string raw;
  std::string word;  // first word, lowercased
  TextCategory category = TextCategory::Other;
  bool empty = false;
};

// First run of letters/digits/'-'/'\'' after skipping leading whitespace and
// punctuation, lowercased.
std::string first_word(const std::string& raw);
ParsedCompletion parse_completion(const LmVocab& vocab, const TextEpisode& ep, const std::string& raw);

struct EndpointConfig {
  std::string name;      // label used in tables; defaults to model
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/completions";
  std::string model;
  std::string token_env;  // environment variable holding the bearer token; empty means none
  std::size_t max_retries = 3;
  double timeout_seconds = 30.0;
  double temperature = 0.0;
  std::size_t max_tokens = 8;
  double backoff_initial_seconds = 0.5;
  double backoff_max_seconds = 8.0;
  std::size_t parallelism = 4;

  void validate() const;
  static EndpointConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// A file holds either one endpoint object or {"endpoints": [...]}.
std::vector<EndpointConfig> load_endpoint_configs(const std::filesystem::path& path);

enum class QueryStatus { Ok, AuthFailure, Timeout, Malformed, HttpError, ConnectionError };
std::string to_string(QueryStatus s);

struct QueryResult {
  QueryStatus status = QueryStatus::Ok;
  std::string text;
  std::string error;
  int http_status = 0;
  std::size_t attempts = 0;
  bool ok() const { return status == QueryStatus::Ok; }
};

// Request body in the completions shape and the field the text is read from.
nlohmann::json completion_request(const EndpointConfig& config, const std::string& prompt);
std::optional<std::string> completion_text(const nlohmann::json& response);

// Blocking POST with retry on 429, 5xx, timeouts and connection errors;
// 401/403 fail immediately. The token is read from config.token_env.
class CompletionClient {
 public:
  explicit CompletionClient(EndpointConfig config);
  QueryResult complete(const std::string& prompt) const;
  const EndpointConfig& config() const noexcept { return config_; }

 private:
  EndpointConfig config_;
  std::string token_;
};

struct TextHistogram {
  std::size_t color = 0;
  std::size_t shape = 0;
  std::size_t other = 0;

  void add(TextCategory c);
  std::size_t n() const { return color + shape + other; }
  double frequency(TextCategory c) const;
  TextHistogram& operator+=(const TextHistogram& o);
};

// Predictive-dimension view: rule_consistent counts responses along `dimension`
// (ShapeConsistent or ColorConsistent), exemplar_alternative the other feature.
OutcomeHistogram as_outcomes(const TextHistogram& h, TextCategory dimension);

struct TranscriptRecord {
  std::string model;
  LmCondition condition = LmCondition::Control;
  int format = 1;
  std::uint64_t episode = 0;
  std::string prompt;
  QueryResult result;
  ParsedCompletion parsed;

  nlohmann::json to_json() const;
};

struct ConditionResult {
  LmCondition condition = LmCondition::Control;
  std::map<int, TextHistogram> per_format;
  TextHistogram pooled;
  std::size_t attempted = 0;
  std::size_t failed = 0;
  std::map<std::string, std::size_t> failures_by_status;
  bool invalid = false;  // more than half of the queries failed
  std::vector<TranscriptRecord> records;
};

struct LmRunOptions {
  std::size_t episodes = 100;
  std::vector<int> formats{1, 2, 3, 4};
  std::uint64_t seed = 0;
};

// Answers one prompt; the default is a CompletionClient, tests inject fakes.
using CompleteFn = std::function<QueryResult(const std::string& prompt)>;

// Every episode is issued once per requested format. Up to `parallelism`
// queries are in flight; results are aggregated by episode index so the
// outcome does not depend on completion order.
ConditionResult run_condition(const LmVocab& vocab, LmCondition condition, const LmRunOptions& opts,
                              const CompleteFn& complete, std::size_t parallelism = 4, const std::string& model = {});
ConditionResult run_condition(const LmVocab& vocab, const EndpointConfig& endpoint, LmCondition condition,
                              const LmRunOptions& opts);

struct ModelRuleness {
  std::string model;
  std::map<LmCondition, ConditionResult> conditions;
  std::optional<RulenessScore> shape;  // shape-predictive vs control
  std::optional<RulenessScore> color;  // color-predictive vs control
  bool invalid = false;
};

// Ruleness is computed only from conditions that were run and are valid.
ModelRuleness summarize_model(const std::string& model, std::map<LmCondition, ConditionResult> conditions);

nlohmann::json to_json(const TextHistogram& h);
nlohmann::json to_json(const ConditionResult& r);  // without transcript records
nlohmann::json to_json(const ModelRuleness& m);

void append_transcript(const std::filesystem::path& path, const std::vector<TranscriptRecord>& records);

}  // namespace rulex
