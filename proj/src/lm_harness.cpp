#include "rulex/lm_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "rulex/error.hpp"

namespace rulex {

namespace {

constexpr std::uint64_t kLmStream = 0x4c4d;  // "LM"

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool starts_with_vowel(const std::string& w) {
  return !w.empty() && std::string("aeiou").find(static_cast<char>(std::tolower(w[0]))) != std::string::npos;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

LmVocab LmVocab::builtin() {
  LmVocab v;
  v.colors = {"red", "blue", "green", "yellow", "purple", "orange", "black", "white"};
  v.shapes = {{"circle", "circular"},     {"square", "square"},          {"triangle", "triangular"},
              {"rectangle", "rectangular"}, {"oval", "oval"},             {"star", "star-shaped"},
              {"heart", "heart-shaped"},    {"diamond", "diamond-shaped"}};
  v.labels = {"dax", "wug", "fep", "blicket", "toma", "zorp", "kiki", "modi", "gazzer", "tufa", "pilk", "mipen"};
  return v;
}

LmVocab LmVocab::from_json(const nlohmann::json& j) {
  LmVocab v;
  try {
    v.colors = j.at("colors").get<std::vector<std::string>>();
    for (const auto& s : j.at("shapes")) v.shapes.push_back({s.at("noun").get<std::string>(), s.at("adjective").get<std::string>()});
    v.labels = j.at("labels").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("lm vocab: ") + e.what());
  }
  v.validate();
  return v;
}

LmVocab LmVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open lm vocab " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, "lm vocab " + path.string() + ": " + e.what());
  }
}

nlohmann::json LmVocab::to_json() const {
  nlohmann::json shapes_j = nlohmann::json::array();
  for (const auto& s : shapes) shapes_j.push_back({{"noun", s.noun}, {"adjective", s.adjective}});
  return {{"colors", colors}, {"shapes", shapes_j}, {"labels", labels}};
}

void LmVocab::validate() const {
  // Episodes need A, B and an extra value per feature and three labels.
  require(colors.size() >= 3 && shapes.size() >= 3, ErrorKind::Config, "lm vocab needs at least 3 colors and 3 shapes");
  require(labels.size() >= 3, ErrorKind::Config, "lm vocab needs at least 3 labels");
  require(colors.size() == shapes.size(), ErrorKind::Config,
          "lm vocab: color and shape lists must have equal length (they index one class space)");
  std::set<std::string> feature_words;
  for (const auto& c : colors) feature_words.insert(lower(c));
  for (const auto& s : shapes) {
    feature_words.insert(lower(s.noun));
    feature_words.insert(lower(s.adjective));
  }
  std::set<std::string> seen;
  for (const auto& l : labels) {
    const auto w = lower(l);
    require(!w.empty() && first_word(w) == w, ErrorKind::Config, "lm vocab: label '" + l + "' is not a single word");
    require(!feature_words.count(w), ErrorKind::Config, "lm vocab: label '" + l + "' collides with a feature word");
    require(seen.insert(w).second, ErrorKind::Config, "lm vocab: duplicate label '" + l + "'");
  }
  std::set<std::string> colors_seen;
  for (const auto& c : colors) require(colors_seen.insert(lower(c)).second, ErrorKind::Config, "lm vocab: duplicate color " + c);
}

std::string to_string(LmCondition c) {
  switch (c) {
    case LmCondition::ShapePredictive: return "shape";
    case LmCondition::ColorPredictive: return "color";
    case LmCondition::Control: return "control";
  }
  return "?";
}

LmCondition lm_condition_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "shape" || l == "shape-predictive") return LmCondition::ShapePredictive;
  if (l == "color" || l == "color-predictive") return LmCondition::ColorPredictive;
  if (l == "control") return LmCondition::Control;
  fail(ErrorKind::Config, "unknown lm condition '" + s + "' (expected shape, color or control)");
}

std::size_t TextEpisode::color_label() const {
  for (const auto& it : context)
    if (it.color == query_color) return it.label;
  fail(ErrorKind::Contract, "text episode: no context item shares the query color");
}

std::size_t TextEpisode::shape_label() const {
  for (const auto& it : context)
    if (it.shape == query_shape) return it.label;
  fail(ErrorKind::Contract, "text episode: no context item shares the query shape");
}

TextEpisode make_text_episode(const LmVocab& vocab, LmCondition condition, std::uint64_t seed, std::uint64_t index) {
  vocab.validate();
  Rng rng(mix_seed(seed, kLmStream + static_cast<std::uint64_t>(condition), index));
  TextEpisode ep;
  ep.condition = condition;
  ep.spec = PartialExposureSpec::random(rng, vocab.colors.size(), condition == LmCondition::Control);
  std::vector<std::size_t> words(vocab.labels.size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = i;
  std::shuffle(words.begin(), words.end(), rng);
  ep.label_words = {words[0], words[1], words[2]};

  const bool shape_first = condition == LmCondition::ShapePredictive;
  auto place = [&](const StimulusClass& c, std::size_t& color, std::size_t& shape) {
    color = shape_first ? c.slot2 : c.slot1;
    shape = shape_first ? c.slot1 : c.slot2;
  };
  for (const auto& cc : ep.spec.composition())
    for (std::size_t k = 0; k < cc.count; ++k) {
      TextItem item;
      place(cc.cls, item.color, item.shape);
      item.label = cc.label;
      ep.context.push_back(item);
    }
  std::shuffle(ep.context.begin(), ep.context.end(), rng);
  place(ep.spec.query(), ep.query_color, ep.query_shape);
  return ep;
}

std::string render_phrase(const LmVocab& vocab, std::size_t color, std::size_t shape, int format) {
  require(color < vocab.colors.size() && shape < vocab.shapes.size(), ErrorKind::Index, "render: feature index out of range");
  const auto& c = vocab.colors[color];
  const auto& s = vocab.shapes[shape];
  switch (format) {
    case 1: return c + " " + s.noun;
    case 2: return std::string(starts_with_vowel(s.noun) ? "an " : "a ") + s.noun + " that is " + c;
    case 3: return "an object that is " + s.adjective + " and " + c;
    case 4: return "an object that is " + c + " and " + s.adjective;
    default: fail(ErrorKind::Config, "unknown prompt format " + std::to_string(format) + " (expected 1-4)");
  }
}

std::string render_prompt(const LmVocab& vocab, const TextEpisode& ep, int format) {
  std::string out;
  for (const auto& it : ep.context)
    out += render_phrase(vocab, it.color, it.shape, format) + ": " + vocab.labels[ep.label_words[it.label]] + "\n";
  out += render_phrase(vocab, ep.query_color, ep.query_shape, format) + ":";
  return out;
}

std::optional<PromptView> parse_prompt(const LmVocab& vocab, const std::string& prompt) {
  auto features = [&](const std::string& phrase) -> std::optional<std::pair<std::size_t, std::size_t>> {
    std::optional<std::size_t> color, shape;
    for (const auto& w : split_words(lower(phrase))) {
      for (std::size_t i = 0; i < vocab.colors.size(); ++i)
        if (w == lower(vocab.colors[i])) color = i;
      for (std::size_t i = 0; i < vocab.shapes.size(); ++i)
        if (w == lower(vocab.shapes[i].noun) || w == lower(vocab.shapes[i].adjective)) shape = i;
    }
    if (!color || !shape) return std::nullopt;
    return std::make_pair(*color, *shape);
  };

  PromptView view;
  std::istringstream in(prompt);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.empty()) return std::nullopt;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    const auto pos = lines[i].rfind(": ");
    if (pos == std::string::npos) return std::nullopt;
    auto f = features(lines[i].substr(0, pos));
    if (!f) return std::nullopt;
    view.context.push_back({f->first, f->second, lower(lines[i].substr(pos + 2))});
  }
  const auto& last = lines.back();
  if (last.empty() || last.back() != ':') return std::nullopt;
  auto q = features(last.substr(0, last.size() - 1));
  if (!q) return std::nullopt;
  view.query_color = q->first;
  view.query_shape = q->second;
  return view;
}

std::string to_string(TextCategory c) {
  switch (c) {
    case TextCategory::ColorConsistent: return "color_consistent";
    case TextCategory::ShapeConsistent: return "shape_consistent";
    case TextCategory::Other: return "other";
  }
  return "?";
}

std::string first_word(const std::string& raw) {
  auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '-' || c == '\''; };
  std::size_t i = 0;
  while (i < raw.size() && !std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
  std::size_t j = i;
  while (j < raw.size() && is_word(static_cast<unsigned char>(raw[j]))) ++j;
  while (j > i && !std::isalnum(static_cast<unsigned char>(raw[j - 1]))) --j;
  return lower(raw.substr(i, j - i));
}

ParsedCompletion parse_completion(const LmVocab& vocab, const TextEpisode& ep, const std::string& raw) {
  ParsedCompletion p;
  p.raw = raw;
  p.word = first_word(raw);
  p.empty = p.word.empty();
  if (p.empty) return p;
  const auto& color_word = vocab.labels[ep.label_words[ep.color_label()]];
  const auto& shape_word = vocab.labels[ep.label_words[ep.shape_label()]];
  if (p.word == lower(color_word))
    p.category = TextCategory::ColorConsistent;
  else if (p.word == lower(shape_word))
    p.category = TextCategory::ShapeConsistent;
  return p;
}

void EndpointConfig::validate() const {
  require(!base_url.empty(), ErrorKind::Config, "endpoint: base_url is required");
  require(base_url.rfind("http://", 0) == 0 || base_url.rfind("https://", 0) == 0, ErrorKind::Config,
          "endpoint: base_url must start with http:// or https://");
  require(!model.empty(), ErrorKind::Config, "endpoint: model is required");
  require(temperature >= 0.0, ErrorKind::Config, "endpoint: temperature must be >= 0");
  require(timeout_seconds > 0.0, ErrorKind::Config, "endpoint: timeout_seconds must be > 0");
  require(parallelism >= 1, ErrorKind::Config, "endpoint: parallelism must be >= 1");
  require(max_tokens >= 1, ErrorKind::Config, "endpoint: max_tokens must be >= 1");
}

EndpointConfig EndpointConfig::from_json(const nlohmann::json& j) {
  EndpointConfig c;
  static const std::set<std::string> known = {"name", "base_url", "path", "model", "token_env", "max_retries",
                                              "timeout_seconds", "temperature", "max_tokens",
                                              "backoff_initial_seconds", "backoff_max_seconds", "parallelism"};
  require(j.is_object(), ErrorKind::Config, "endpoint: expected an object");
  for (const auto& [k, _] : j.items()) require(known.count(k) > 0, ErrorKind::Config, "endpoint: unknown key '" + k + "'");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::Config, std::string("endpoint: wrong type for '") + key + "'");
    }
  };
  get("name", c.name);
  get("base_url", c.base_url);
  get("path", c.path);
  get("model", c.model);
  get("token_env", c.token_env);
  get("max_retries", c.max_retries);
  get("timeout_seconds", c.timeout_seconds);
  get("temperature", c.temperature);
  get("max_tokens", c.max_tokens);
  get("backoff_initial_seconds", c.backoff_initial_seconds);
  get("backoff_max_seconds", c.backoff_max_seconds);
  get("parallelism", c.parallelism);
  if (c.name.empty()) c.name = c.model;
  c.validate();
  return c;
}

nlohmann::json EndpointConfig::to_json() const {
  return {{"name", name},
          {"base_url", base_url},
          {"path", path},
          {"model", model},
          {"token_env", token_env},
          {"max_retries", max_retries},
          {"timeout_seconds", timeout_seconds},
          {"temperature", temperature},
          {"max_tokens", max_tokens},
          {"backoff_initial_seconds", backoff_initial_seconds},
          {"backoff_max_seconds", backoff_max_seconds},
          {"parallelism", parallelism}};
}

std::vector<EndpointConfig> load_endpoint_configs(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open endpoint config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, "endpoint config " + path.string() + ": " + e.what());
  }
  std::vector<EndpointConfig> out;
  if (j.is_object() && j.contains("endpoints")) {
    require(j.size() == 1, ErrorKind::Config, "endpoint config: only 'endpoints' allowed at top level alongside a list");
    for (const auto& e : j.at("endpoints")) out.push_back(EndpointConfig::from_json(e));
  } else {
    out.push_back(EndpointConfig::from_json(j));
  }
  require(!out.empty(), ErrorKind::Config, "endpoint config lists no endpoints");
  return out;
}

std::string to_string(QueryStatus s) {
  switch (s) {
    case QueryStatus::Ok: return "ok";
    case QueryStatus::AuthFailure: return "auth_failure";
    case QueryStatus::Timeout: return "timeout";
    case QueryStatus::Malformed: return "malformed_response";
    case QueryStatus::HttpError: return "http_error";
    case QueryStatus::ConnectionError: return "connection_error";
  }
  return "?";
}

nlohmann::json completion_request(const EndpointConfig& config, const std::string& prompt) {
  return {{"model", config.model}, {"prompt", prompt}, {"max_tokens", config.max_tokens}, {"temperature", config.temperature}};
}

std::optional<std::string> completion_text(const nlohmann::json& response) {
  if (!response.is_object() || !response.contains("choices")) return std::nullopt;
  const auto& choices = response["choices"];
  if (!choices.is_array() || choices.empty() || !choices[0].is_object()) return std::nullopt;
  const auto& first = choices[0];
  if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
  return std::nullopt;
}

CompletionClient::CompletionClient(EndpointConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.token_env.empty()) {
    const char* tok = std::getenv(config_.token_env.c_str());
    require(tok != nullptr && *tok != '\0', ErrorKind::Config,
            "endpoint " + config_.name + ": environment variable " + config_.token_env + " is not set");
    token_ = tok;
  }
}

QueryResult CompletionClient::complete(const std::string& prompt) const {
  using clock = std::chrono::steady_clock;
  const std::string body = completion_request(config_, prompt).dump();
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  httplib::Client cli(config_.base_url);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  QueryResult r;
  double backoff = config_.backoff_initial_seconds;
  for (std::size_t attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff = std::min(backoff * 2.0, config_.backoff_max_seconds);
    }
    r = QueryResult{};
    r.attempts = attempt + 1;
    const auto t0 = clock::now();
    auto res = cli.Post(config_.path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      const double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                              elapsed >= 0.9 * config_.timeout_seconds);
      r.status = timed_out ? QueryStatus::Timeout : QueryStatus::ConnectionError;
      r.error = httplib::to_string(err);
      continue;
    }
    r.http_status = res->status;
    if (res->status == 401 || res->status == 403) {
      r.status = QueryStatus::AuthFailure;
      r.error = "HTTP " + std::to_string(res->status);
      return r;
    }
    if (res->status == 429 || res->status >= 500) {
      r.status = QueryStatus::HttpError;
      r.error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      r.status = QueryStatus::HttpError;
      r.error = "HTTP " + std::to_string(res->status);
      return r;
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    auto text = j.is_discarded() ? std::nullopt : completion_text(j);
    if (!text) {
      r.status = QueryStatus::Malformed;
      r.error = "response lacks choices[0].text";
      return r;
    }
    r.status = QueryStatus::Ok;
    r.text = *text;
    return r;
  }
  return r;
}

void TextHistogram::add(TextCategory c) {
  switch (c) {
    case TextCategory::ColorConsistent: ++color; break;
    case TextCategory::ShapeConsistent: ++shape; break;
    case TextCategory::Other: ++other; break;
  }
}

double TextHistogram::frequency(TextCategory c) const {
  require(n() > 0, ErrorKind::Contract, "frequency of an empty histogram");
  const auto k = c == TextCategory::ColorConsistent ? color : c == TextCategory::ShapeConsistent ? shape : other;
  return static_cast<double>(k) / static_cast<double>(n());
}

TextHistogram& TextHistogram::operator+=(const TextHistogram& o) {
  color += o.color;
  shape += o.shape;
  other += o.other;
  return *this;
}

OutcomeHistogram as_outcomes(const TextHistogram& h, TextCategory dimension) {
  require(dimension != TextCategory::Other, ErrorKind::Contract, "predictive dimension must be color or shape");
  OutcomeHistogram o;
  o.rule_consistent = dimension == TextCategory::ShapeConsistent ? h.shape : h.color;
  o.exemplar_alternative = dimension == TextCategory::ShapeConsistent ? h.color : h.shape;
  o.other = h.other;
  return o;
}

nlohmann::json TranscriptRecord::to_json() const {
  nlohmann::json j = {{"model", model},
                      {"condition", to_string(condition)},
                      {"format", format},
                      {"episode", episode},
                      {"prompt", prompt},
                      {"status", to_string(result.status)},
                      {"attempts", result.attempts},
                      {"raw", result.text}};
  if (result.http_status) j["http_status"] = result.http_status;
  if (!result.ok()) j["error"] = result.error;
  if (result.ok()) {
    j["word"] = parsed.word;
    j["category"] = to_string(parsed.category);
    if (parsed.empty) j["empty_extraction"] = true;
  }
  return j;
}

ConditionResult run_condition(const LmVocab& vocab, LmCondition condition, const LmRunOptions& opts,
                              const CompleteFn& complete, std::size_t parallelism, const std::string& model) {
  require(opts.episodes >= 1, ErrorKind::Config, "lm run needs at least one episode");
  require(!opts.formats.empty(), ErrorKind::Config, "lm run needs at least one format");
  for (int f : opts.formats)
    require(f >= 1 && f <= 4, ErrorKind::Config, "unknown prompt format " + std::to_string(f) + " (expected 1-4)");
  require(parallelism >= 1, ErrorKind::Config, "parallelism must be >= 1");

  std::vector<TextEpisode> episodes;
  episodes.reserve(opts.episodes);
  for (std::size_t e = 0; e < opts.episodes; ++e) episodes.push_back(make_text_episode(vocab, condition, opts.seed, e));

  const std::size_t jobs = opts.episodes * opts.formats.size();
  std::vector<TranscriptRecord> records(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr worker_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        auto& rec = records[i];
        rec.model = model;
        rec.condition = condition;
        rec.episode = i / opts.formats.size();
        rec.format = opts.formats[i % opts.formats.size()];
        rec.prompt = render_prompt(vocab, episodes[rec.episode], rec.format);
        rec.result = complete(rec.prompt);
        if (rec.result.ok()) rec.parsed = parse_completion(vocab, episodes[rec.episode], rec.result.text);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!worker_error) worker_error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(parallelism, jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (worker_error) std::rethrow_exception(worker_error);

  ConditionResult out;
  out.condition = condition;
  out.attempted = jobs;
  for (int f : opts.formats) out.per_format[f];
  for (const auto& rec : records) {
    if (!rec.result.ok()) {
      ++out.failed;
      ++out.failures_by_status[to_string(rec.result.status)];
      continue;
    }
    out.per_format[rec.format].add(rec.parsed.category);
    out.pooled.add(rec.parsed.category);
  }
  out.invalid = 2 * out.failed > out.attempted;
  out.records = std::move(records);
  return out;
}

ConditionResult run_condition(const LmVocab& vocab, const EndpointConfig& endpoint, LmCondition condition,
                              const LmRunOptions& opts) {
  const CompletionClient client(endpoint);
  return run_condition(vocab, condition, opts, [&](const std::string& p) { return client.complete(p); },
                       endpoint.parallelism, endpoint.name.empty() ? endpoint.model : endpoint.name);
}

ModelRuleness summarize_model(const std::string& model, std::map<LmCondition, ConditionResult> conditions) {
  ModelRuleness m;
  m.model = model;
  for (const auto& [_, r] : conditions) m.invalid = m.invalid || r.invalid;
  auto usable = [&](LmCondition c) {
    auto it = conditions.find(c);
    return it != conditions.end() && !it->second.invalid && it->second.pooled.n() > 0;
  };
  if (usable(LmCondition::Control)) {
    const auto& control = conditions.at(LmCondition::Control).pooled;
    if (usable(LmCondition::ShapePredictive))
      m.shape = ruleness(as_outcomes(conditions.at(LmCondition::ShapePredictive).pooled, TextCategory::ShapeConsistent),
                         as_outcomes(control, TextCategory::ShapeConsistent));
    if (usable(LmCondition::ColorPredictive))
      m.color = ruleness(as_outcomes(conditions.at(LmCondition::ColorPredictive).pooled, TextCategory::ColorConsistent),
                         as_outcomes(control, TextCategory::ColorConsistent));
  }
  m.conditions = std::move(conditions);
  return m;
}

nlohmann::json to_json(const TextHistogram& h) {
  nlohmann::json j = {{"color_consistent", h.color}, {"shape_consistent", h.shape}, {"other", h.other}, {"n", h.n()}};
  return j;
}

nlohmann::json to_json(const ConditionResult& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [f, h] : r.per_format) per[std::to_string(f)] = to_json(h);
  return {{"condition", to_string(r.condition)}, {"pooled", to_json(r.pooled)}, {"per_format", per},
          {"attempted", r.attempted},             {"failed", r.failed},         {"failures_by_status", r.failures_by_status},
          {"invalid", r.invalid}};
}

namespace {
nlohmann::json to_json(const RulenessScore& s) {
  return {{"ruleness", s.ruleness},
          {"halfwidth", s.halfwidth},
          {"p_predictive_partial", s.p_predictive_partial},
          {"p_predictive_control", s.p_predictive_control},
          {"n_partial", s.n_partial},
          {"n_control", s.n_control}};
}
}  // namespace

nlohmann::json to_json(const ModelRuleness& m) {
  nlohmann::json conds = nlohmann::json::object();
  for (const auto& [c, r] : m.conditions) conds[to_string(c)] = to_json(r);
  nlohmann::json j = {{"model", m.model}, {"invalid", m.invalid}, {"conditions", conds}};
  j["shape_ruleness"] = m.shape ? to_json(*m.shape) : nlohmann::json();
  j["color_ruleness"] = m.color ? to_json(*m.color) : nlohmann::json();
  return j;
}

void append_transcript(const std::filesystem::path& path, const std::vector<TranscriptRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write transcript " + path.string());
  for (const auto& r : records) out << r.to_json().dump() << '\n';
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for transcript " + path.string());
}

}  // namespace rulex
