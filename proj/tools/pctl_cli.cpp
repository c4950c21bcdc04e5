// Command-line front-end. Links the public C API only; every subcommand
// writes a run manifest before doing real work so a run can be reproduced
// from its output directory alone.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pctl/pctl.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

int exit_code(pctl_status st) { return static_cast<int>(st); }

[[noreturn]] void fail(pctl_status st) {
  std::cerr << "error: " << pctl_last_error() << "\n";
  std::exit(exit_code(st));
}

struct ConfigHandle {
  pctl_config* ptr = nullptr;
  ~ConfigHandle() { pctl_config_free(ptr); }
};
struct DatasetHandle {
  pctl_dataset* ptr = nullptr;
  ~DatasetHandle() { pctl_dataset_free(ptr); }
};
struct ModelHandle {
  pctl_model* ptr = nullptr;
  ~ModelHandle() { pctl_model_free(ptr); }
};
struct MetricsHandle {
  pctl_metrics* ptr = nullptr;
  ~MetricsHandle() { pctl_metrics_free(ptr); }
};

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { pctl_string_free(ptr); }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

// Shared flags: config file, per-key overrides, optional seed shorthand.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (section.key = value lines)");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set loss.lambda=0.05");
    cmd->add_option("--seed", seed, "shorthand for --set run.seed=<n>");
  }

  ConfigHandle resolve() const {
    ConfigHandle cfg;
    cfg.ptr = config_path.empty() ? pctl_config_create() : pctl_config_load(config_path.c_str());
    if (!cfg.ptr) fail(PCTL_CONFIG_ERROR);
    for (const std::string& kv : overrides) {
      std::size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
        std::exit(kExitConfigError);
      }
      pctl_status st = pctl_config_set(cfg.ptr, kv.substr(0, eq).c_str(),
                                       kv.substr(eq + 1).c_str());
      if (st != PCTL_OK) fail(st);
    }
    if (!seed.empty()) {
      pctl_status st = pctl_config_set(cfg.ptr, "run.seed", seed.c_str());
      if (st != PCTL_OK) fail(st);
    }
    return cfg;
  }
};

std::string default_out_dir() {
  const char* env = std::getenv("PCTL_OUT_DIR");
  return env && *env ? std::string(env) : std::string("pctl_out");
}

json config_json(const pctl_config* cfg) {
  OwnedString echo;
  echo.ptr = pctl_config_echo(cfg);
  if (!echo.ptr) fail(PCTL_CONFIG_ERROR);
  json out = json::object();
  std::istringstream in(echo.str());
  std::string line;
  while (std::getline(in, line)) {
    std::size_t eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

std::string dataset_hash(const pctl_dataset* ds) {
  char buf[32];
  if (pctl_dataset_hash(ds, buf, sizeof(buf)) != PCTL_OK) fail(PCTL_RUNTIME_ERROR);
  return buf;
}

// Written before any computation: enough to reproduce the run exactly.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const pctl_config* cfg, const std::string& data_hash) {
  fs::create_directories(out_dir);
  json manifest{{"command", command},
                {"config", config_json(cfg)},
                {"seed", config_json(cfg)["run.seed"]},
                {"dataset_hash", data_hash},
                {"output_dir", out_dir},
                {"tool_version", pctl_version()}};
  std::ofstream out(out_dir + "/manifest.json");
  if (!out) {
    std::cerr << "error: cannot write manifest in '" << out_dir << "'\n";
    std::exit(kExitConfigError);
  }
  out << manifest.dump(2) << "\n";
}

int cmd_generate(const ConfigArgs& cargs, const std::string& out_path) {
  ConfigHandle cfg = cargs.resolve();
  DatasetHandle ds;
  ds.ptr = pctl_dataset_generate(cfg.ptr);
  if (!ds.ptr) fail(PCTL_RUNTIME_ERROR);
  std::string hash = dataset_hash(ds.ptr);
  fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_manifest(out.has_parent_path() ? out.parent_path().string() : ".", "generate", cfg.ptr,
                 hash);
  pctl_status st = pctl_dataset_save(ds.ptr, out_path.c_str());
  if (st != PCTL_OK) fail(st);
  std::cout << "wrote " << out_path << " (" << pctl_dataset_record_count(ds.ptr)
            << " records, hash " << hash << ")\n";
  return kExitOk;
}

int cmd_train(const ConfigArgs& cargs, const std::string& data_path, const std::string& mode,
              const std::string& out_dir, bool quiet) {
  ConfigHandle cfg = cargs.resolve();
  if (!mode.empty()) {
    pctl_status st = pctl_config_set(cfg.ptr, "run.mode", mode.c_str());
    if (st != PCTL_OK) fail(st);
  }
  DatasetHandle ds;
  ds.ptr = pctl_dataset_load(data_path.c_str());
  if (!ds.ptr) fail(PCTL_CONFIG_ERROR);
  write_manifest(out_dir, "train", cfg.ptr, dataset_hash(ds.ptr));

  std::string checkpoint = out_dir + "/best.ckpt";
  auto progress = [](const pctl_epoch_info* info, void* user) {
    if (user && *static_cast<bool*>(user)) return;
    std::printf("epoch %3llu  loss %.6f  val_ce %.6f  val_acc %.4f  test_acc %.4f\n",
                static_cast<unsigned long long>(info->epoch), info->total_loss, info->val_ce,
                info->val_acc, info->test_acc);
  };
  ModelHandle model;
  MetricsHandle metrics;
  pctl_status st = pctl_train(cfg.ptr, ds.ptr, checkpoint.c_str(), progress, &quiet, &model.ptr,
                              &metrics.ptr);
  if (st != PCTL_OK) fail(st);

  std::string csv_path = out_dir + "/metrics.csv";
  st = pctl_metrics_write_csv(metrics.ptr, csv_path.c_str());
  if (st != PCTL_OK) fail(st);
  st = pctl_model_save(model.ptr, checkpoint.c_str());
  if (st != PCTL_OK) fail(st);

  json summary{{"best_epoch", pctl_metrics_best_epoch(metrics.ptr)},
               {"epochs", pctl_metrics_epoch_count(metrics.ptr)},
               {"phase2_start", pctl_metrics_phase2_start(metrics.ptr)},
               {"checkpoint", checkpoint},
               {"metrics_csv", csv_path}};
  std::ofstream summary_out(out_dir + "/summary.json");
  summary_out << summary.dump(2) << "\n";
  std::cout << "best epoch " << pctl_metrics_best_epoch(metrics.ptr) << "; checkpoint "
            << checkpoint << "; metrics " << csv_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& domain, const std::string& split, bool as_json,
             const std::string& csv_out) {
  ModelHandle model;
  model.ptr = pctl_model_load(checkpoint.c_str());
  if (!model.ptr) fail(PCTL_CONFIG_ERROR);
  DatasetHandle ds;
  ds.ptr = pctl_dataset_load(data_path.c_str());
  if (!ds.ptr) fail(PCTL_CONFIG_ERROR);

  pctl_eval_result res;
  pctl_status st = pctl_evaluate(model.ptr, ds.ptr, domain.c_str(), split.c_str(), &res);
  if (st != PCTL_OK) fail(st);

  json out{{"domain", domain},
           {"split", split},
           {"accuracy", res.accuracy},
           {"cross_entropy", res.cross_entropy},
           {"tp", res.true_positives},
           {"fp", res.false_positives},
           {"fn", res.false_negatives},
           {"tn", res.true_negatives}};
  if (as_json) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::printf("%s/%s  accuracy %.4f  ce %.6f  TP %llu  FP %llu  FN %llu  TN %llu\n",
                domain.c_str(), split.c_str(), res.accuracy, res.cross_entropy,
                static_cast<unsigned long long>(res.true_positives),
                static_cast<unsigned long long>(res.false_positives),
                static_cast<unsigned long long>(res.false_negatives),
                static_cast<unsigned long long>(res.true_negatives));
  }
  if (!csv_out.empty()) {
    std::ofstream f(csv_out);
    f << "domain,split,accuracy,cross_entropy,tp,fp,fn,tn\n"
      << domain << "," << split << "," << res.accuracy << "," << res.cross_entropy << ","
      << res.true_positives << "," << res.false_positives << "," << res.false_negatives << ","
      << res.true_negatives << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const ConfigArgs& cargs, const std::string& data_path,
               const std::string& conditions, const std::string& out_dir) {
  ConfigHandle cfg = cargs.resolve();
  DatasetHandle ds;
  ds.ptr = pctl_dataset_load(data_path.c_str());
  if (!ds.ptr) fail(PCTL_CONFIG_ERROR);
  write_manifest(out_dir, "ablate", cfg.ptr, dataset_hash(ds.ptr));

  OwnedString report;
  pctl_status st = pctl_run_ablation(cfg.ptr, ds.ptr, conditions.c_str(), &report.ptr);
  if (st != PCTL_OK) fail(st);
  std::cout << report.str();
  std::ofstream f(out_dir + "/ablation.txt");
  f << report.str();
  return kExitOk;
}

int cmd_verify(bool inject_sign_flip) {
  OwnedString report;
  uint32_t flags =
      inject_sign_flip ? static_cast<uint32_t>(PCTL_VERIFY_INJECT_INFO_NCE_SIGN_FLIP) : 0u;
  pctl_status st = pctl_verify(flags, &report.ptr);
  std::cout << report.str();
  if (st == PCTL_OK) return kExitOk;
  if (st == PCTL_VERIFY_FAILED) return kExitVerifyFailed;
  fail(st);
}

int cmd_plot(const std::string& metrics_path, const std::string& svg_path) {
  pctl_status st = pctl_plot_metrics(metrics_path.c_str(), svg_path.c_str());
  if (st != PCTL_OK) fail(st);
  std::cout << "wrote " << svg_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototypical contrastive transfer learning trainer"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "generate a synthetic two-domain dataset");
  ConfigArgs gen_args;
  gen_args.attach(generate);
  std::string gen_out = default_out_dir() + "/dataset.jsonl";
  generate->add_option("--out", gen_out, "output dataset path");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  ConfigArgs train_args;
  train_args.attach(train);
  std::string train_data, train_mode, train_out = default_out_dir();
  bool train_quiet = false;
  train->add_option("--data", train_data, "dataset file")->required();
  train->add_option("--mode", train_mode, "pctl|target-only|fine-tune");
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--quiet", train_quiet, "suppress per-epoch progress lines");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_domain = "target", eval_split = "test", eval_csv;
  bool eval_json = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset file")->required();
  eval->add_option("--domain", eval_domain, "source|target");
  eval->add_option("--split", eval_split, "train|validation|test");
  eval->add_flag("--json", eval_json, "emit machine-readable JSON");
  eval->add_option("--csv", eval_csv, "also write the result as CSV");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run the clustering-schedule ablation");
  ConfigArgs ablate_args;
  ablate_args.attach(ablate);
  std::string ablate_data, ablate_out = default_out_dir();
  std::string ablate_conditions = "33;64;128;64,128,256";
  ablate->add_option("--data", ablate_data, "dataset file")->required();
  ablate->add_option("--conditions", ablate_conditions,
                     "semicolon-separated k schedules, e.g. 33;64;128;64,128,256");
  ablate->add_option("--out", ablate_out, "output directory");

  // verify
  auto* verify = app.add_subcommand("verify", "run the built-in property checks");
  bool inject_sign_flip = false;
  verify
      ->add_flag("--inject-info-nce-sign-flip", inject_sign_flip,
                 "corrupt the info_nce gradient to confirm the checks catch it")
      ->group("");  // hidden test hook

  // plot
  auto* plot = app.add_subcommand("plot", "render loss/accuracy curves from a metrics CSV");
  std::string plot_metrics, plot_out = "metrics.svg";
  plot->add_option("--metrics", plot_metrics, "metrics CSV path")->required();
  plot->add_option("--out", plot_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfigError;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen_args, gen_out);
    if (train->parsed()) return cmd_train(train_args, train_data, train_mode, train_out,
                                          train_quiet);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_domain, eval_split, eval_json,
                                        eval_csv);
    if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_data, ablate_conditions,
                                            ablate_out);
    if (verify->parsed()) return cmd_verify(inject_sign_flip);
    if (plot->parsed()) return cmd_plot(plot_metrics, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitConfigError;
}
