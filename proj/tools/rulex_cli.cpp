// rulex-cli: command-line front end over the C interface.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
// 3 a --require threshold was not met.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rulex/rulex.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitThreshold = 3;

struct Failure {
  int code;
  std::string message;
};

int exit_code_for(rx_status s) {
  return (s == RX_ERR_CONFIG || s == RX_ERR_INVALID_ARGUMENT) ? kExitUsage : kExitRuntime;
}

void check(rx_status s, const std::string& context) {
  if (s != RX_OK) throw Failure{exit_code_for(s), context + ": " + rx_status_name(s) + ": " + rx_last_error()};
}

// Owns a string returned by the library.
class CString {
 public:
  CString() = default;
  CString(const CString&) = delete;
  CString& operator=(const CString&) = delete;
  ~CString() { rx_string_free(p_); }
  char** out() { return &p_; }
  std::string str() const { return p_ ? p_ : ""; }

 private:
  char* p_ = nullptr;
};

class Config {
 public:
  Config(const std::string& file, const std::vector<std::string>& overrides) {
    std::vector<const char*> ov;
    for (const auto& o : overrides) ov.push_back(o.c_str());
    check(rx_config_resolve(file.empty() ? nullptr : file.c_str(), ov.data(), ov.size(), &cfg_), "config");
  }
  explicit Config(rx_config* c) : cfg_(c) {}
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  ~Config() { rx_config_free(cfg_); }
  const rx_config* get() const { return cfg_; }
  nlohmann::json manifest() const {
    CString s;
    check(rx_config_to_json(cfg_, s.out()), "config");
    return nlohmann::json::parse(s.str());
  }

 private:
  rx_config* cfg_ = nullptr;
};

void write_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Failure{kExitRuntime, "cannot write " + path};
  out << text;
}

// Prints one line per requirement; returns false if any failed.
bool check_requirements(const std::string& report_json, const std::vector<std::string>& reqs) {
  bool all = true;
  for (const auto& r : reqs) {
    int ok = 0;
    CString desc;
    check(rx_report_check(report_json.c_str(), r.c_str(), &ok, desc.out()), "requirement");
    std::cout << (ok ? "PASS " : "FAIL ") << desc.str() << "\n";
    all = all && ok;
  }
  return all;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << v;
  return os.str();
}

void print_synthetic_summary(const nlohmann::json& report) {
  if (!report.contains("summary")) return;
  for (const auto& [k, v] : report["summary"].items())
    std::cout << "  " << k << ": " << fmt(v["mean"].get<double>()) << " +/- " << fmt(v["halfwidth"].get<double>()) << "\n";
  if (report.contains("ruleness"))
    std::cout << "  ruleness: " << fmt(report["ruleness"]["ruleness"].get<double>()) << " +/- "
              << fmt(report["ruleness"]["halfwidth"].get<double>()) << "\n";
}

void log_cb(const char* msg, void*) { std::cerr << "[rulex] " << msg << "\n"; }

void step_cb(uint64_t seed, uint64_t step, double loss, double lr, int is_eval, void*) {
  if (is_eval)
    std::cerr << "[rulex] seed " << seed << " step " << step << " loss " << loss << " lr " << lr << "\n";
}

std::string absolute(const std::string& p) { return p.empty() ? p : std::filesystem::absolute(p).string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rule vs exemplar generalization laboratory"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(rx_version()));

  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  std::vector<std::string> requires_;
  app.add_option("--config", config_file, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed (train: run only this seed)");
  app.add_option("--out", out, "Output path (file or experiment directory)");
  app.add_option("--set", sets, "Config override key.path=value (repeatable)");

  auto* gen = app.add_subcommand("gen", "Generate a dataset of episodes");
  std::string gen_regime = "fewshot", gen_format = "jsonl";
  std::size_t gen_count = 1000;
  gen->add_option("--regime", gen_regime, "fewshot, partial, control, inweights, inweights_eval or rulepretrain");
  gen->add_option("--count", gen_count, "Number of episodes");
  gen->add_option("--format", gen_format, "jsonl or binary")->check(CLI::IsMember({"jsonl", "binary"}));

  auto* train = app.add_subcommand("train", "Train models and write an experiment directory");
  std::string train_regime;
  train->add_option("--regime", train_regime, "fewshot, inweights or rulepretrain");
  train->add_option("--require", requires_, "Threshold on the report, e.g. summary.accuracy.mean>=0.9");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, eval_regime;
  std::optional<std::size_t> eval_episodes;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint stem (path without .json/.bin)")->required();
  eval->add_option("--regime", eval_regime, "Probe regime (default: the checkpoint's)");
  eval->add_option("--episodes", eval_episodes, "Episodes per probe");
  eval->add_option("--require", requires_, "Threshold on the report");

  auto* oracle = app.add_subcommand("oracle", "Run the rule and exemplar oracles");
  std::size_t oracle_episodes = 10000;
  oracle->add_option("--episodes", oracle_episodes, "Episodes per condition");
  oracle->add_option("--require", requires_, "Threshold on the report");

  auto* lm = app.add_subcommand("lm-eval", "Probe completion endpoints with text episodes");
  std::string endpoints, lm_formats;
  std::vector<std::string> conditions;
  std::optional<std::size_t> lm_episodes;
  lm->add_option("--endpoints", endpoints, "Endpoint config JSON (token via its token_env variable)")
      ->check(CLI::ExistingFile);
  lm->add_option("--condition", conditions, "shape, color or control (repeatable)");
  lm->add_option("--formats", lm_formats, "Comma-separated subset of 1,2,3,4");
  lm->add_option("--episodes", lm_episodes, "Episodes per condition");
  lm->add_option("--require", requires_, "Threshold on the report");

  auto* report = app.add_subcommand("report", "Render bar-chart data from an experiment directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "Experiment directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--require", requires_, "Threshold on the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    std::vector<std::string> overrides = sets;
    std::string report_json;

    if (*gen) {
      Config cfg(config_file, overrides);
      const std::string path = out.empty() ? (gen_format == "binary" ? "dataset.rxsq" : "dataset.jsonl") : out;
      check(rx_dataset_generate(cfg.get(), gen_regime.c_str(), gen_count, seed.value_or(0), path.c_str(),
                                gen_format == "binary"),
            "gen");
      std::size_t n = 0, bad = 0;
      check(rx_dataset_check(cfg.get(), path.c_str(), gen_format == "binary", &n, &bad), "gen");
      std::cout << "wrote " << n << " " << gen_regime << " episodes to " << path << " (" << bad
                << " invariant violations)\n";
      return bad ? kExitRuntime : kExitOk;
    }

    if (*train) {
      if (out.empty()) throw Failure{kExitUsage, "train: --out <experiment dir> is required"};
      if (!train_regime.empty()) overrides.push_back("regime=" + train_regime);
      if (seed) overrides.push_back("train.seeds=[" + std::to_string(*seed) + "]");
      Config cfg(config_file, overrides);
      if (cfg.manifest()["config"]["regime"] == "lm")
        throw Failure{kExitUsage, "train: regime 'lm' is run with lm-eval"};
      CString rep;
      check(rx_experiment_run(cfg.get(), out.c_str(), log_cb, step_cb, nullptr, rep.out()), "train");
      report_json = rep.str();
      std::cout << "experiment written to " << out << "\n";
      print_synthetic_summary(nlohmann::json::parse(report_json));
    } else if (*eval) {
      rx_model* model = nullptr;
      check(rx_model_load(checkpoint.c_str(), &model), "eval");
      std::unique_ptr<rx_model, void (*)(rx_model*)> guard(model, rx_model_free);
      CString info;
      check(rx_model_info(model, info.out()), "eval");
      const auto meta = nlohmann::json::parse(info.str())["metadata"];
      Config cfg(config_file, overrides);
      const auto episodes = eval_episodes.value_or(cfg.manifest()["config"]["eval"]["episodes"].get<std::size_t>());
      const std::uint64_t s = seed.value_or(meta.value("seed", std::uint64_t{0}));
      CString rep;
      check(rx_model_evaluate(model, cfg.get(), eval_regime.empty() ? nullptr : eval_regime.c_str(), s, episodes, rep.out()),
            "eval");
      report_json = rep.str();
      if (!out.empty()) write_file(out, report_json + "\n");
      std::cout << report_json << "\n";
    } else if (*oracle) {
      Config cfg(config_file, overrides);
      CString rep;
      check(rx_oracle_run(cfg.get(), oracle_episodes, seed.value_or(0), rep.out()), "oracle");
      report_json = rep.str();
      if (!out.empty()) write_file(out, report_json + "\n");
      std::cout << report_json << "\n";
    } else if (*lm) {
      if (out.empty()) throw Failure{kExitUsage, "lm-eval: --out <experiment dir> is required"};
      overrides.push_back("regime=lm");
      if (!endpoints.empty()) overrides.push_back("lm.endpoints_file=" + nlohmann::json(absolute(endpoints)).dump());
      if (!conditions.empty()) overrides.push_back("lm.conditions=" + nlohmann::json(conditions).dump());
      if (!lm_formats.empty()) {
        std::vector<int> fs;
        std::stringstream ss(lm_formats);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          try {
            fs.push_back(std::stoi(tok));
          } catch (const std::exception&) {
            throw Failure{kExitUsage, "lm-eval: bad --formats entry '" + tok + "'"};
          }
        }
        overrides.push_back("lm.formats=" + nlohmann::json(fs).dump());
      }
      if (lm_episodes) overrides.push_back("lm.episodes=" + std::to_string(*lm_episodes));
      if (seed) overrides.push_back("train.seeds=[" + std::to_string(*seed) + "]");
      Config cfg(config_file, overrides);
      CString rep;
      const rx_status st = rx_experiment_run(cfg.get(), out.c_str(), log_cb, nullptr, nullptr, rep.out());
      check(st, "lm-eval");
      report_json = rep.str();
      const auto j = nlohmann::json::parse(report_json);
      for (const auto& m : j["models"]) {
        std::cout << m["model"].get<std::string>() << ":";
        for (const char* dim : {"shape_ruleness", "color_ruleness"})
          if (!m[dim].is_null())
            std::cout << " " << dim << " " << fmt(m[dim]["ruleness"].get<double>()) << " +/- "
                      << fmt(m[dim]["halfwidth"].get<double>());
        std::cout << "\n";
      }
    } else if (*report) {
      CString rep;
      check(rx_report_load(report_dir.c_str(), rep.out()), "report");
      report_json = rep.str();
      CString csv;
      check(rx_report_csv(report_json.c_str(), csv.out()), "report");
      if (!out.empty()) write_file(out, csv.str());
      std::cout << csv.str();
    }

    if (!requires_.empty() && !check_requirements(report_json, requires_)) return kExitThreshold;
    return kExitOk;
  } catch (const Failure& f) {
    std::cerr << "rulex-cli: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "rulex-cli: " << e.what() << "\n";
    return kExitRuntime;
  }
}
