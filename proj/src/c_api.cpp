#include "rulex/rulex.h"

#include <cstring>
#include <fstream>
#include <string>

#include "rulex/checkpoint.hpp"
#include "rulex/dataset.hpp"
#include "rulex/error.hpp"
#include "rulex/experiment.hpp"
#include "rulex/trainer.hpp"

struct rx_config {
  rulex::ExperimentManifest manifest;
};

struct rx_model {
  rulex::ModelParams params;
  nlohmann::json metadata;
};

namespace {

thread_local std::string g_last_error;

rx_status status_of(rulex::ErrorKind k) {
  switch (k) {
    case rulex::ErrorKind::Dimension: return RX_ERR_DIMENSION;
    case rulex::ErrorKind::Index: return RX_ERR_INDEX;
    case rulex::ErrorKind::Contract: return RX_ERR_CONTRACT;
    case rulex::ErrorKind::Config: return RX_ERR_CONFIG;
    case rulex::ErrorKind::Io: return RX_ERR_IO;
    case rulex::ErrorKind::Numeric: return RX_ERR_NUMERIC;
    case rulex::ErrorKind::Network: return RX_ERR_NETWORK;
  }
  return RX_ERR_INTERNAL;
}

template <class F>
rx_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return RX_OK;
  } catch (const rulex::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return RX_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return RX_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RX_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return RX_ERR_INTERNAL;
  }
}

rx_status invalid(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return RX_ERR_INVALID_ARGUMENT;
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

const rulex::VocabConfig& vocab_of(const rx_config* c) {
  static const rulex::VocabConfig defaults;
  return c ? c->manifest.data : defaults;
}

}  // namespace

extern "C" {

const char* rx_version(void) { return RULEX_VERSION; }

const char* rx_last_error(void) { return g_last_error.c_str(); }

const char* rx_status_name(rx_status s) {
  switch (s) {
    case RX_OK: return "ok";
    case RX_ERR_DIMENSION: return "dimension error";
    case RX_ERR_INDEX: return "index error";
    case RX_ERR_CONTRACT: return "contract error";
    case RX_ERR_CONFIG: return "config error";
    case RX_ERR_IO: return "io error";
    case RX_ERR_NUMERIC: return "numeric error";
    case RX_ERR_NETWORK: return "network error";
    case RX_ERR_INVALID_ARGUMENT: return "invalid argument";
    case RX_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void rx_string_free(char* s) { std::free(s); }

rx_status rx_config_resolve(const char* path, const char* const* overrides, size_t n, rx_config** out) {
  if (!out) return invalid("out");
  if (n && !overrides) return invalid("overrides");
  *out = nullptr;
  return guarded([&] {
    std::vector<std::string> ov;
    for (size_t i = 0; i < n; ++i) {
      if (!overrides[i]) rulex::fail(rulex::ErrorKind::Config, "null override entry");
      ov.emplace_back(overrides[i]);
    }
    std::optional<std::filesystem::path> file;
    if (path) file = path;
    *out = new rx_config{rulex::resolve_config(file, ov)};
  });
}

rx_status rx_config_from_manifest(const char* manifest_path, rx_config** out) {
  if (!manifest_path) return invalid("manifest_path");
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] { *out = new rx_config{rulex::load_manifest(manifest_path)}; });
}

rx_status rx_config_to_json(const rx_config* config, char** out_json) {
  if (!config) return invalid("config");
  if (!out_json) return invalid("out_json");
  return guarded([&] { *out_json = dup(rulex::to_json(config->manifest).dump(2)); });
}

void rx_config_free(rx_config* config) { delete config; }

rx_status rx_experiment_run(const rx_config* config, const char* dir, rx_log_fn log, rx_step_fn step, void* user,
                            char** out_report_json) {
  if (!config) return invalid("config");
  if (!dir) return invalid("dir");
  return guarded([&] {
    rulex::RunObserver obs;
    if (log) obs.log = [log, user](const std::string& m) { log(m.c_str(), user); };
    if (step)
      obs.on_step = [step, user](const rulex::StepInfo& s) { step(s.seed, s.step, s.loss, s.lr, s.checkpoint ? 1 : 0, user); };
    auto report = rulex::run_experiment(config->manifest, dir, obs);
    if (out_report_json) *out_report_json = dup(report.dump(2));
  });
}

rx_status rx_dataset_generate(const rx_config* config, const char* regime, size_t count, uint64_t seed, const char* path,
                              int binary) {
  if (!regime) return invalid("regime");
  if (!path) return invalid("path");
  return guarded([&] {
    const auto examples = rulex::generate_dataset(rulex::regime_from_string(regime), count, seed, vocab_of(config));
    if (binary)
      rulex::write_binary(path, examples);
    else
      rulex::write_jsonl(path, examples);
  });
}

rx_status rx_dataset_check(const rx_config* config, const char* path, int binary, size_t* out_count,
                           size_t* out_violations) {
  if (!path) return invalid("path");
  return guarded([&] {
    const auto examples = binary ? rulex::read_binary(path) : rulex::read_jsonl(path);
    size_t bad = 0;
    for (const auto& ex : examples) bad += rulex::check_sequence_invariants(ex, vocab_of(config)).empty() ? 0 : 1;
    if (out_count) *out_count = examples.size();
    if (out_violations) *out_violations = bad;
  });
}

rx_status rx_model_load(const char* stem, rx_model** out) {
  if (!stem) return invalid("checkpoint_stem");
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<rx_model>();
    m->params = rulex::load_checkpoint(stem, &m->metadata);
    *out = m.release();
  });
}

rx_status rx_model_info(const rx_model* model, char** out_json) {
  if (!model) return invalid("model");
  if (!out_json) return invalid("out_json");
  return guarded([&] {
    nlohmann::json j = {{"config", rulex::to_json(model->params.config)},
                        {"metadata", model->metadata},
                        {"parameters", model->params.num_parameters()}};
    *out_json = dup(j.dump(2));
  });
}

rx_status rx_model_predict(const rx_model* model, const float* tokens, size_t length, size_t dim, float* probs,
                           size_t probs_len, size_t* out_label) {
  if (!model) return invalid("model");
  if (!tokens) return invalid("tokens");
  return guarded([&] {
    const auto& cfg = model->params.config;
    rulex::require(dim == cfg.input_dim, rulex::ErrorKind::Dimension,
                   "token width " + std::to_string(dim) + " does not match model input " + std::to_string(cfg.input_dim));
    rulex::TokenSequence seq;
    seq.dim = dim;
    seq.tokens.assign(tokens, tokens + length * dim);
    const auto pred = rulex::predict_label(model->params, seq);
    if (probs) {
      rulex::require(probs_len >= pred.probs.size(), rulex::ErrorKind::Dimension, "probability buffer too small");
      std::copy(pred.probs.begin(), pred.probs.end(), probs);
    }
    if (out_label) *out_label = pred.label;
  });
}

rx_status rx_model_evaluate(const rx_model* model, const rx_config* config, const char* regime, uint64_t seed,
                            size_t episodes, char** out_json) {
  if (!model) return invalid("model");
  if (!out_json) return invalid("out_json");
  return guarded([&] {
    std::string r = regime ? regime : model->metadata.value("regime", "");
    rulex::require(!r.empty(), rulex::ErrorKind::Config, "checkpoint records no regime; pass one explicitly");
    const auto report =
        rulex::evaluate_checkpoint(model->params, rulex::train_regime_from_string(r), seed, episodes, vocab_of(config));
    *out_json = dup(report.dump(2));
  });
}

void rx_model_free(rx_model* model) { delete model; }

rx_status rx_oracle_run(const rx_config* config, size_t episodes, uint64_t seed, char** out_json) {
  if (!out_json) return invalid("out_json");
  return guarded([&] {
    const double c = config ? config->manifest.eval.similarity_scale : rulex::kDefaultSimilarityScale;
    const auto rep = rulex::run_oracles(episodes, seed, vocab_of(config), c);
    *out_json = dup(rulex::to_json(rep).dump(2));
  });
}

rx_status rx_report_load(const char* experiment_dir, char** out_json) {
  if (!experiment_dir) return invalid("experiment_dir");
  if (!out_json) return invalid("out_json");
  return guarded([&] {
    const auto path = std::filesystem::path(experiment_dir) / "reports" / "eval_report.json";
    std::ifstream in(path);
    rulex::require(static_cast<bool>(in), rulex::ErrorKind::Io, "no evaluation report at " + path.string());
    *out_json = dup(nlohmann::json::parse(in).dump(2));
  });
}

rx_status rx_report_csv(const char* report_json, char** out_csv) {
  if (!report_json) return invalid("report_json");
  if (!out_csv) return invalid("out_csv");
  return guarded([&] { *out_csv = dup(rulex::report_csv(nlohmann::json::parse(report_json))); });
}

rx_status rx_report_check(const char* report_json, const char* requirement, int* out_ok, char** out_description) {
  if (!report_json) return invalid("report_json");
  if (!requirement) return invalid("requirement");
  if (!out_ok) return invalid("out_ok");
  return guarded([&] {
    const auto [ok, desc] = rulex::check_requirement(nlohmann::json::parse(report_json), requirement);
    *out_ok = ok ? 1 : 0;
    if (out_description) *out_description = dup(desc);
  });
}

rx_status rx_lr_at(uint64_t step, double base_lr, uint64_t warmup_steps, double* out_lr) {
  if (!out_lr) return invalid("out_lr");
  return guarded([&] { *out_lr = rulex::lr_at(step, base_lr, warmup_steps); });
}

}  // extern "C"
