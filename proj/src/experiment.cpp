#include "rulex/experiment.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "rulex/checkpoint.hpp"
#include "rulex/error.hpp"
#include "rulex/metrics.hpp"

#ifndef RULEX_VERSION
#define RULEX_VERSION "0.0.0"
#endif

namespace rulex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamGenVocab = 0x67656e766full;
constexpr std::uint64_t kStreamGenSpec = 0x67656e7370ull;
constexpr std::uint64_t kStreamGen = 0x67656e6570ull;
constexpr std::uint64_t kStreamOracle = 0x6f7261636cull;

std::string type_name(const json& j) {
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number_float()) return "number";
  return j.type_name();
}

// Checks that `value` can stand in for `def` (the default at the same path).
void check_type(const json& def, const json& value, const std::string& path) {
  auto mismatch = [&] {
    fail(ErrorKind::Config, "config key '" + path + "': expected " + type_name(def) + ", got " + value.type_name() +
                                (value.is_primitive() ? " " + value.dump() : ""));
  };
  if (def.is_object()) {
    if (!value.is_object()) mismatch();
  } else if (def.is_boolean()) {
    if (!value.is_boolean()) mismatch();
  } else if (def.is_number_unsigned()) {
    if (!value.is_number_unsigned()) {
      if (value.is_number_integer())
        fail(ErrorKind::Config, "config key '" + path + "': must be non-negative, got " + value.dump());
      mismatch();
    }
  } else if (def.is_number_integer()) {
    if (!value.is_number_integer()) mismatch();
  } else if (def.is_number_float()) {
    if (!value.is_number()) mismatch();
  } else if (def.is_string()) {
    if (!value.is_string()) mismatch();
  } else if (def.is_array()) {
    if (!value.is_array()) mismatch();
    if (!def.empty())
      for (std::size_t i = 0; i < value.size(); ++i) check_type(def[0], value[i], path + "[" + std::to_string(i) + "]");
  }
}

void merge_strict(json& base, const json& layer, const std::string& prefix, std::map<std::string, std::string>& prov,
                  const std::string& source) {
  for (const auto& [key, value] : layer.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) fail(ErrorKind::Config, "unknown config key '" + path + "'");
    json& target = base[key];
    check_type(target, value, path);
    if (target.is_object()) {
      merge_strict(target, value, path, prov, source);
    } else {
      target = value.is_number() && target.is_number_float() ? json(value.get<double>()) : value;
      prov[path] = source;
    }
  }
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json& at_path(json& root, const std::string& path) {
  json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty() || !cur->is_object() || !cur->contains(key)) fail(ErrorKind::Config, "unknown config key '" + path + "'");
    cur = &(*cur)[key];
    if (dot == std::string::npos) return *cur;
    start = dot + 1;
  }
}

template <class T>
T get_field(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, "config key '" + section + "." + key + "' is missing or has the wrong type");
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

json histogram_report(const OutcomeHistogram& h) {
  json j = {{"rule_consistent", h.rule_consistent}, {"exemplar_alternative", h.exemplar_alternative},
            {"other", h.other}, {"n", h.n()}};
  if (h.n() > 0)
    j["frequency"] = {{"rule_consistent", h.frequency(Outcome::RuleConsistent)},
                      {"exemplar_alternative", h.frequency(Outcome::ExemplarAlternative)},
                      {"other", h.frequency(Outcome::Other)}};
  return j;
}

json ruleness_json(const RulenessScore& s) {
  return {{"ruleness", s.ruleness},
          {"halfwidth", s.halfwidth},
          {"p_predictive_partial", s.p_predictive_partial},
          {"p_predictive_control", s.p_predictive_control}};
}

TrainRegime train_regime(const std::string& regime) { return train_regime_from_string(regime); }

std::string safe_name(std::string s) {
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s.empty() ? "model" : s;
}

}  // namespace

json default_config_json() {
  const TrainConfig t;
  const VocabConfig d;
  const EvalSettings e;
  const LmSettings l;
  return {{"schema_version", kConfigSchemaVersion},
          {"name", "experiment"},
          {"regime", "fewshot"},
          {"model", to_json(ModelConfig{})},
          {"train",
           {{"batch_size", t.batch_size},
            {"total_steps", t.total_steps},
            {"base_lr", t.base_lr},
            {"warmup_steps", t.warmup_steps},
            {"eval_every", t.eval_every},
            {"eval_episodes", t.eval_episodes},
            {"seeds", t.seeds}}},
          {"data",
           {{"num_slots", d.num_slots},
            {"feature_len", d.feature_len},
            {"num_classes", d.num_classes},
            {"bank_size", d.bank_size},
            {"covariance_scale", d.covariance_scale}}},
          {"eval", {{"episodes", e.episodes}, {"similarity_scale", e.similarity_scale}}},
          {"lm",
           {{"endpoints_file", l.endpoints_file},
            {"vocab_file", l.vocab_file},
            {"conditions", l.conditions},
            {"formats", l.formats},
            {"episodes", l.episodes}}}};
}

json ExperimentManifest::config_json() const {
  json j = default_config_json();
  j["name"] = name;
  j["regime"] = regime;
  j["model"] = to_json(model);
  j["train"] = {{"batch_size", train.batch_size},     {"total_steps", train.total_steps},
                {"base_lr", train.base_lr},           {"warmup_steps", train.warmup_steps},
                {"eval_every", train.eval_every},     {"eval_episodes", train.eval_episodes},
                {"seeds", train.seeds}};
  j["data"] = {{"num_slots", data.num_slots},
               {"feature_len", data.feature_len},
               {"num_classes", data.num_classes},
               {"bank_size", data.bank_size},
               {"covariance_scale", data.covariance_scale}};
  j["eval"] = {{"episodes", eval.episodes}, {"similarity_scale", eval.similarity_scale}};
  j["lm"] = {{"endpoints_file", lm.endpoints_file},
             {"vocab_file", lm.vocab_file},
             {"conditions", lm.conditions},
             {"formats", lm.formats},
             {"episodes", lm.episodes}};
  return j;
}

ExperimentManifest resolve_config_text(const std::string& text, const std::vector<std::string>& overrides,
                                       const std::string& origin) {
  json tree = default_config_json();
  std::map<std::string, std::string> prov;

  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    json file;
    try {
      file = json::parse(text);
    } catch (const json::parse_error& e) {
      const auto [line, col] = line_col(text, e.byte);
      fail(ErrorKind::Config, origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed config (" +
                                  e.what() + ")");
    }
    require(file.is_object(), ErrorKind::Config, origin + ": config must be a JSON object");
    if (file.contains("schema_version")) {
      const auto& v = file["schema_version"];
      require(v.is_number_integer(), ErrorKind::Config, "config key 'schema_version': expected integer");
      require(v.get<int>() == kConfigSchemaVersion, ErrorKind::Config,
              "config schema_version " + v.dump() + " is not supported (this build reads version " +
                  std::to_string(kConfigSchemaVersion) + ")");
    }
    merge_strict(tree, file, "", prov, "file");
  }

  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::Config, "override '" + ov + "' is not key.path=value");
    const std::string path = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json& target = at_path(tree, path);
    check_type(target, value, path);
    require(!target.is_object(), ErrorKind::Config, "override '" + path + "' names a section, not a value");
    if (path == "schema_version")
      require(value == json(kConfigSchemaVersion), ErrorKind::Config, "schema_version cannot be overridden");
    target = value.is_number() && target.is_number_float() ? json(value.get<double>()) : value;
    prov[path] = "override";
  }

  ExperimentManifest m;
  m.name = get_field<std::string>(tree, "name", "");
  m.regime = get_field<std::string>(tree, "regime", "");
  require(m.regime == "lm" || m.regime == "fewshot" || m.regime == "inweights" || m.regime == "rulepretrain",
          ErrorKind::Config, "config key 'regime': unknown regime '" + m.regime + "'");
  const json& t = tree["train"];
  m.train.batch_size = get_field<std::size_t>(t, "batch_size", "train");
  m.train.total_steps = get_field<std::size_t>(t, "total_steps", "train");
  m.train.base_lr = get_field<double>(t, "base_lr", "train");
  m.train.warmup_steps = get_field<std::size_t>(t, "warmup_steps", "train");
  m.train.eval_every = get_field<std::size_t>(t, "eval_every", "train");
  m.train.eval_episodes = get_field<std::size_t>(t, "eval_episodes", "train");
  m.train.seeds = get_field<std::vector<std::uint64_t>>(t, "seeds", "train");
  if (m.synthetic()) m.train.regime = train_regime(m.regime);
  const json& d = tree["data"];
  m.data.num_slots = get_field<std::size_t>(d, "num_slots", "data");
  m.data.feature_len = get_field<std::size_t>(d, "feature_len", "data");
  m.data.num_classes = get_field<std::size_t>(d, "num_classes", "data");
  m.data.bank_size = get_field<std::size_t>(d, "bank_size", "data");
  m.data.covariance_scale = get_field<double>(d, "covariance_scale", "data");
  // The input width follows the stimulus length unless set explicitly.
  if (!prov.count("model.input_dim")) tree["model"]["input_dim"] = m.data.num_slots * m.data.feature_len;
  m.model = model_config_from_json(tree["model"]);
  const json& e = tree["eval"];
  m.eval.episodes = get_field<std::size_t>(e, "episodes", "eval");
  m.eval.similarity_scale = get_field<double>(e, "similarity_scale", "eval");
  const json& l = tree["lm"];
  m.lm.endpoints_file = get_field<std::string>(l, "endpoints_file", "lm");
  m.lm.vocab_file = get_field<std::string>(l, "vocab_file", "lm");
  m.lm.conditions = get_field<std::vector<std::string>>(l, "conditions", "lm");
  m.lm.formats = get_field<std::vector<int>>(l, "formats", "lm");
  m.lm.episodes = get_field<std::size_t>(l, "episodes", "lm");
  for (const auto& c : m.lm.conditions) lm_condition_from_string(c);
  for (int f : m.lm.formats)
    require(f >= 1 && f <= 4, ErrorKind::Config, "config key 'lm.formats': format " + std::to_string(f) + " not in 1-4");

  if (m.synthetic()) {
    m.train.validate();
    m.model.validate_context(kContextPairs);
    require(m.model.input_dim == m.data.num_slots * m.data.feature_len, ErrorKind::Config,
            "config key 'model.input_dim' must equal data.num_slots * data.feature_len");
  }
  m.code_version = RULEX_VERSION;
  m.created = utc_now();
  m.overrides = overrides;
  m.provenance = std::move(prov);
  return m;
}

ExperimentManifest resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  std::string text;
  std::string origin = "<defaults>";
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
    origin = file->string();
  }
  auto m = resolve_config_text(text, overrides, origin);
  if (file) m.config_file = file->string();
  return m;
}

json to_json(const ExperimentManifest& m) {
  return {{"format", "rulex-manifest"},
          {"config", m.config_json()},
          {"code_version", m.code_version},
          {"created", m.created},
          {"config_file", m.config_file},
          {"overrides", m.overrides},
          {"provenance", m.provenance}};
}

ExperimentManifest manifest_from_json(const json& j) {
  try {
    require(j.value("format", "") == "rulex-manifest", ErrorKind::Config, "not a rulex manifest");
    auto m = resolve_config_text(j.at("config").dump());
    m.code_version = j.at("code_version").get<std::string>();
    m.created = j.at("created").get<std::string>();
    m.config_file = j.at("config_file").get<std::string>();
    m.overrides = j.at("overrides").get<std::vector<std::string>>();
    m.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("manifest: ") + e.what());
  }
}

ExperimentManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, "manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

json synthetic_report(const ExperimentManifest& manifest, const std::vector<RunRecord>& runs) {
  json report;
  report["name"] = manifest.name;
  report["regime"] = manifest.regime;
  report["config"] = manifest.config_json();
  report["code_version"] = manifest.code_version;
  const auto summary = summarize_runs(runs);
  report["runs_count"] = summary.runs;
  report["single_run"] = summary.single_run;
  json s = json::object();
  for (const auto& [k, v] : summary.metrics) s[k] = {{"mean", v.mean}, {"halfwidth", v.halfwidth}, {"runs", v.runs}};
  report["summary"] = s;

  // Pooled last-half histograms give the ruleness for regimes with a control.
  OutcomeHistogram partial, control;
  bool has_control = false;
  json per_run = json::array();
  for (const auto& r : runs) {
    for (std::size_t i = r.checkpoints.size() / 2; i < r.checkpoints.size(); ++i) {
      partial += r.checkpoints[i].eval.partial;
      if (r.checkpoints[i].eval.control) {
        control += *r.checkpoints[i].eval.control;
        has_control = true;
      }
    }
    json w = json::object();
    for (const auto& [k, v] : window_average(r)) w[k] = v;
    per_run.push_back({{"seed", r.seed},
                       {"steps_completed", r.steps_completed},
                       {"checkpoints", r.checkpoints.size()},
                       {"window", w},
                       {"final", to_json(r.checkpoints.back().eval)}});
  }
  report["runs"] = per_run;
  report["pooled_partial"] = histogram_report(partial);
  if (has_control) {
    report["pooled_control"] = histogram_report(control);
    report["ruleness"] = ruleness_json(ruleness(partial, control));
  }
  return report;
}

json run_experiment(const ExperimentManifest& manifest, const fs::path& dir, const RunObserver& observer) {
  auto log = [&](const std::string& msg) {
    if (observer.log) observer.log(msg);
  };
  fs::create_directories(dir);
  for (const char* stale : {"FAILED", "metrics.csv", "runs", "reports", "transcripts", "checkpoints"})
    fs::remove_all(dir / stale);
  write_text(dir / "manifest.json", to_json(manifest).dump(2) + "\n");

  try {
    json report;
    if (manifest.synthetic()) {
      std::vector<RunRecord> runs;
      for (auto seed : manifest.train.seeds) {
        log("training seed " + std::to_string(seed));
        TrainOutputs outs;
        outs.metrics_csv = dir / "metrics.csv";
        outs.checkpoint_dir = dir / "checkpoints";
        outs.on_step = observer.on_step;
        RunRecord rec = train(manifest.model, manifest.train, seed, outs, manifest.data);
        rec.config = manifest.config_json();
        write_text(dir / "runs" / ("seed_" + std::to_string(seed) + ".json"), to_json(rec).dump(2) + "\n");
        runs.push_back(std::move(rec));
      }
      report = synthetic_report(manifest, runs);
    } else {
      require(!manifest.lm.endpoints_file.empty(), ErrorKind::Config, "config key 'lm.endpoints_file' is required for regime lm");
      const fs::path base = manifest.config_file.empty() ? fs::path() : fs::path(manifest.config_file).parent_path();
      auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
      const LmVocab vocab = manifest.lm.vocab_file.empty() ? LmVocab::builtin() : LmVocab::load(resolve(manifest.lm.vocab_file));
      const auto endpoints = load_endpoint_configs(resolve(manifest.lm.endpoints_file));
      LmRunOptions opts;
      opts.episodes = manifest.lm.episodes;
      opts.formats = manifest.lm.formats;
      opts.seed = manifest.train.seeds.front();
      report["name"] = manifest.name;
      report["regime"] = "lm";
      report["config"] = manifest.config_json();
      report["models"] = json::array();
      std::vector<std::string> invalid;
      for (const auto& ep : endpoints) {
        const std::string model = ep.name.empty() ? ep.model : ep.name;
        CompleteFn complete;
        std::shared_ptr<CompletionClient> client;
        if (observer.make_client) {
          complete = observer.make_client(ep);
        } else {
          client = std::make_shared<CompletionClient>(ep);
          complete = [client](const std::string& p) { return client->complete(p); };
        }
        std::map<LmCondition, ConditionResult> results;
        for (const auto& cname : manifest.lm.conditions) {
          const auto cond = lm_condition_from_string(cname);
          log("querying " + model + " (" + to_string(cond) + ")");
          auto r = run_condition(vocab, cond, opts, complete, ep.parallelism, model);
          append_transcript(dir / "transcripts" / (safe_name(model) + ".jsonl"), r.records);
          r.records.clear();
          results.emplace(cond, std::move(r));
        }
        auto summary = summarize_model(model, std::move(results));
        if (summary.invalid) invalid.push_back(model);
        report["models"].push_back(to_json(summary));
      }
      write_text(dir / "reports" / "eval_report.json", report.dump(2) + "\n");
      if (!invalid.empty()) {
        std::string names;
        for (const auto& n : invalid) names += (names.empty() ? "" : ", ") + n;
        fail(ErrorKind::Network, "more than half of the queries failed for: " + names + " (see transcripts/)");
      }
      return report;
    }
    write_text(dir / "reports" / "eval_report.json", report.dump(2) + "\n");
    return report;
  } catch (const std::exception& e) {
    write_text(dir / "FAILED", std::string(e.what()) + "\n");
    throw;
  }
}

json evaluate_checkpoint(const ModelParams& params, TrainRegime regime, std::uint64_t seed, std::size_t episodes,
                         const VocabConfig& vocab) {
  require(episodes >= 1, ErrorKind::Config, "evaluation needs at least one episode");
  require(params.config.input_dim == vocab.num_slots * vocab.feature_len, ErrorKind::Config,
          "checkpoint input width does not match the stimulus length");
  const TrainingData data(regime, seed, vocab);
  const auto r = evaluate(params, data, episodes);
  json j;
  j["regime"] = to_string(regime);
  j["seed"] = seed;
  j["episodes"] = episodes;
  j["partial"] = histogram_report(r.partial);
  j["control"] = r.control ? histogram_report(*r.control) : json(nullptr);
  j["accuracy"] = r.accuracy ? json(*r.accuracy) : json(nullptr);
  j["ruleness"] = r.control ? ruleness_json(ruleness(r.partial, *r.control)) : json(nullptr);
  return j;
}

OracleReport run_oracles(std::size_t n, std::uint64_t seed, const VocabConfig& vc, double c) {
  // Each episode gets its own vocab: the A/B versus X/W symmetry that makes
  // the exemplar read-out balanced holds over centroid draws, and a single
  // fixed vocab carries a persistent slot-1/slot-2 distance asymmetry.
  Rng coin(mix_seed(seed, kStreamOracle, 1));
  OracleReport rep;
  for (bool control : {false, true}) {
    const Regime regime = control ? Regime::Control : Regime::PartialExposure;
    for (std::size_t i = 0; i < n; ++i) {
      const auto vocab = StimulusVocab::build(mix_seed(seed, kStreamOracle + 1 + control, i), vc);
      const auto ex = generate_episode(vocab, regime, mix_seed(seed, kStreamOracle, 2 + control), i);
      const auto& spec = *ex.spec;
      const auto exposure = spec.exposure();
      const auto verdict = rule_oracle(exposure, ex.query_class);
      auto& rule_h = control ? rep.rule_control : rep.rule_partial;
      if (verdict.label) {
        rule_h.add(classify_outcome(spec, *verdict.label));
      } else {
        rule_h.add(Outcome::Other);
        ++(control ? rep.rule_no_unique_control : rep.rule_no_unique_partial);
      }
      const auto probs = exemplar_oracle(episode_exemplars(ex), ex.query, c, 3);
      (control ? rep.exemplar_control : rep.exemplar_partial).add(classify_outcome(spec, sample_argmax(probs, coin)));
    }
  }
  return rep;
}

json to_json(const OracleReport& r) {
  return {{"rule", {{"partial", histogram_report(r.rule_partial)},
                    {"control", histogram_report(r.rule_control)},
                    {"no_unique_rule", {{"partial", r.rule_no_unique_partial}, {"control", r.rule_no_unique_control}}}}},
          {"exemplar", {{"partial", histogram_report(r.exemplar_partial)},
                        {"control", histogram_report(r.exemplar_control)},
                        {"ruleness", ruleness_json(ruleness(r.exemplar_partial, r.exemplar_control))}}}};
}

std::vector<SequenceExample> generate_dataset(Regime regime, std::size_t count, std::uint64_t seed, const VocabConfig& vc) {
  const auto vocab = StimulusVocab::build(mix_seed(seed, kStreamGenVocab, 0), vc);
  std::optional<PartialExposureSpec> spec;
  if (regime == Regime::InWeights || regime == Regime::InWeightsEval) {
    Rng rng(mix_seed(seed, kStreamGenSpec, 0));
    spec = PartialExposureSpec::random(rng, vc.num_classes);
  }
  std::vector<SequenceExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_episode(vocab, regime, mix_seed(seed, kStreamGen, 0), i, spec));
  return out;
}

std::string report_csv(const json& report) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "series,category,frequency,halfwidth\n";
  if (report.value("regime", "") == "lm") {
    for (const auto& m : report.at("models")) {
      const std::string model = m.at("model").get<std::string>();
      for (const auto& [cond, r] : m.at("conditions").items()) {
        const auto& h = r.at("pooled");
        const double n = h.at("n").get<double>();
        for (const char* cat : {"color_consistent", "shape_consistent", "other"}) {
          const double p = n > 0 ? h.at(cat).get<double>() / n : 0.0;
          const double hw = n > 0 ? kZ95 * std::sqrt(p * (1 - p) / n) : 0.0;
          os << model << "/" << cond << "," << cat << "," << p << "," << hw << "\n";
        }
      }
      for (const char* dim : {"shape_ruleness", "color_ruleness"})
        if (m.contains(dim) && !m.at(dim).is_null())
          os << model << "," << dim << "," << m.at(dim).at("ruleness").get<double>() << ","
             << m.at(dim).at("halfwidth").get<double>() << "\n";
    }
    return os.str();
  }
  const auto& s = report.at("summary");
  auto row = [&](const std::string& series, const std::string& cat, const std::string& key) {
    if (!s.contains(key)) return;
    os << series << "," << cat << "," << s.at(key).at("mean").get<double>() << "," << s.at(key).at("halfwidth").get<double>()
       << "\n";
  };
  for (const char* cat : {"rule_consistent", "exemplar_alternative", "other"}) row("partial", cat, cat);
  for (const char* cat : {"rule_consistent", "exemplar_alternative", "other"})
    row("control", cat, std::string("control_") + cat);
  row("accuracy", "accuracy", "accuracy");
  return os.str();
}

std::optional<double> report_value(const json& report, const std::string& path) {
  const json* cur = &report;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (cur->is_object() && cur->contains(key)) {
      cur = &(*cur)[key];
    } else if (cur->is_array() && !key.empty() && key.find_first_not_of("0123456789") == std::string::npos &&
               std::stoul(key) < cur->size()) {
      cur = &(*cur)[std::stoul(key)];
    } else {
      return std::nullopt;
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!cur->is_number()) return std::nullopt;
  return cur->get<double>();
}

std::pair<bool, std::string> check_requirement(const json& report, const std::string& req) {
  std::size_t pos = std::string::npos;
  std::string op;
  for (const char* candidate : {">=", "<=", ">", "<"}) {
    pos = req.find(candidate);
    if (pos != std::string::npos) {
      op = candidate;
      break;
    }
  }
  require(pos != std::string::npos && pos > 0, ErrorKind::Config, "requirement '" + req + "' is not path>=value or path<=value");
  const std::string path = req.substr(0, pos);
  double threshold = 0.0;
  try {
    threshold = std::stod(req.substr(pos + op.size()));
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "requirement '" + req + "' has no numeric threshold");
  }
  const auto v = report_value(report, path);
  if (!v) return {false, path + " missing from report"};
  bool ok = op == ">=" ? *v >= threshold : op == "<=" ? *v <= threshold : op == ">" ? *v > threshold : *v < threshold;
  std::ostringstream os;
  os << path << " = " << std::setprecision(6) << *v << " (required " << op << " " << threshold << ")";
  return {ok, os.str()};
}

}  // namespace rulex
