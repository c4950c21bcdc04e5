// Exercises the shared-library surface the way an external consumer would:
// through pctl.h only, checking status codes and the last-error channel.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <string>

#include "pctl/pctl.h"

namespace {

struct Config {
  pctl_config* ptr;
  Config() : ptr(pctl_config_create()) {}
  ~Config() { pctl_config_free(ptr); }
  void set(const char* key, const char* value) {
    REQUIRE(pctl_config_set(ptr, key, value) == PCTL_OK);
  }
};

void tiny_run_config(Config& cfg) {
  cfg.set("run.epochs", "2");
  cfg.set("run.batch_size", "16");
  cfg.set("run.seed", "5");
  cfg.set("loss.r", "2");
  cfg.set("loss.r_prime", "2");
  cfg.set("cluster.k_schedule", "4");
  cfg.set("encoder.gamma", "0.9");
  cfg.set("encoder.hidden", "8");
  cfg.set("encoder.layers", "1");
  cfg.set("encoder.embed_dim", "8");
  cfg.set("encoder.classifier_hidden", "8");
  cfg.set("data.latent_clusters", "4");
  cfg.set("data.latent_dim", "6");
  cfg.set("data.d_inst", "5");
  cfg.set("data.d_vis", "5");
  cfg.set("data.n_det", "2");
  cfg.set("data.source_train", "96");
  cfg.set("data.source_validation", "16");
  cfg.set("data.source_test", "16");
  cfg.set("data.target_train", "48");
  cfg.set("data.target_validation", "16");
  cfg.set("data.target_test", "16");
}

}  // namespace

TEST_CASE("config: set, get, echo, unknown keys") {
  Config cfg;
  char buf[64];
  REQUIRE(pctl_config_get(cfg.ptr, "loss.lambda", buf, sizeof(buf)) == PCTL_OK);
  CHECK(std::string(buf) == "0.03125");

  CHECK(pctl_config_set(cfg.ptr, "loss.lambda", "0.5") == PCTL_OK);
  REQUIRE(pctl_config_get(cfg.ptr, "loss.lambda", buf, sizeof(buf)) == PCTL_OK);
  CHECK(std::string(buf) == "0.5");

  CHECK(pctl_config_set(cfg.ptr, "bogus.key", "1") == PCTL_CONFIG_ERROR);
  CHECK(std::string(pctl_last_error()).find("bogus.key") != std::string::npos);

  CHECK(pctl_config_get(cfg.ptr, "loss.lambda", buf, 1) == PCTL_CONFIG_ERROR);

  char* echo = pctl_config_echo(cfg.ptr);
  REQUIRE(echo != nullptr);
  CHECK(std::string(echo).find("loss.lambda = 0.5") != std::string::npos);
  pctl_string_free(echo);
}

TEST_CASE("dataset: generate, hash, save, load, record count") {
  Config cfg;
  tiny_run_config(cfg);
  pctl_dataset* ds = pctl_dataset_generate(cfg.ptr);
  REQUIRE(ds != nullptr);
  CHECK(pctl_dataset_record_count(ds) == 96 + 16 + 16 + 48 + 16 + 16);

  char hash[32];
  REQUIRE(pctl_dataset_hash(ds, hash, sizeof(hash)) == PCTL_OK);
  CHECK(std::strlen(hash) == 16);

  REQUIRE(pctl_dataset_save(ds, "capi_ds.jsonl") == PCTL_OK);
  pctl_dataset* back = pctl_dataset_load("capi_ds.jsonl");
  REQUIRE(back != nullptr);
  char hash2[32];
  REQUIRE(pctl_dataset_hash(back, hash2, sizeof(hash2)) == PCTL_OK);
  CHECK(std::string(hash) == hash2);

  CHECK(pctl_dataset_load("missing.jsonl") == nullptr);
  CHECK(std::string(pctl_last_error()).find("missing.jsonl") != std::string::npos);

  pctl_dataset_free(back);
  pctl_dataset_free(ds);
  std::remove("capi_ds.jsonl");
}

TEST_CASE("train, metrics, evaluate, checkpoint round-trip") {
  Config cfg;
  tiny_run_config(cfg);
  pctl_dataset* ds = pctl_dataset_generate(cfg.ptr);
  REQUIRE(ds != nullptr);

  std::size_t epochs_seen = 0;
  auto progress = [](const pctl_epoch_info* info, void* user) {
    CHECK(info->epoch >= 1);
    ++*static_cast<std::size_t*>(user);
  };
  pctl_model* model = nullptr;
  pctl_metrics* metrics = nullptr;
  REQUIRE(pctl_train(cfg.ptr, ds, "capi_best.ckpt", progress, &epochs_seen, &model,
                     &metrics) == PCTL_OK);
  CHECK(epochs_seen == 2);
  CHECK(pctl_metrics_epoch_count(metrics) == 2);
  CHECK(pctl_metrics_best_epoch(metrics) >= 1);
  CHECK(pctl_metrics_phase2_start(metrics) == 0);

  char* csv = pctl_metrics_csv(metrics);
  REQUIRE(csv != nullptr);
  CHECK(std::string(csv).find("l_dual_proto_nce") != std::string::npos);
  pctl_string_free(csv);

  pctl_eval_result eval;
  REQUIRE(pctl_evaluate(model, ds, "target", "test", &eval) == PCTL_OK);
  CHECK(eval.true_positives + eval.false_positives + eval.false_negatives +
            eval.true_negatives == 16);
  CHECK(eval.accuracy >= 0.0);
  CHECK(eval.accuracy <= 1.0);
  CHECK(pctl_evaluate(model, ds, "sideways", "test", &eval) == PCTL_CONFIG_ERROR);

  // The retained checkpoint is the best epoch's model.
  pctl_model* loaded = pctl_model_load("capi_best.ckpt");
  REQUIRE(loaded != nullptr);
  CHECK(pctl_model_inverse_temperature(loaded) ==
        pctl_model_inverse_temperature(model));
  pctl_eval_result eval2;
  REQUIRE(pctl_evaluate(loaded, ds, "target", "test", &eval2) == PCTL_OK);
  CHECK(eval2.accuracy == eval.accuracy);
  CHECK(eval2.cross_entropy == eval.cross_entropy);

  pctl_model_free(loaded);
  pctl_metrics_free(metrics);
  pctl_model_free(model);
  pctl_dataset_free(ds);
  std::remove("capi_best.ckpt");
}

TEST_CASE("invalid configuration surfaces as PCTL_CONFIG_ERROR from train") {
  Config cfg;
  tiny_run_config(cfg);
  cfg.set("cluster.k_schedule", "2");  // below r' + 1
  pctl_dataset* ds = pctl_dataset_generate(cfg.ptr);
  REQUIRE(ds != nullptr);
  pctl_model* model = nullptr;
  pctl_metrics* metrics = nullptr;
  CHECK(pctl_train(cfg.ptr, ds, nullptr, nullptr, nullptr, &model, &metrics) ==
        PCTL_CONFIG_ERROR);
  CHECK(std::string(pctl_last_error()).find("minimum k") != std::string::npos);
  pctl_dataset_free(ds);
}

TEST_CASE("verification passes clean and fails under the sign-flip injection") {
  char* report = nullptr;
  REQUIRE(pctl_verify(0, &report) == PCTL_OK);
  REQUIRE(report != nullptr);
  CHECK(std::string(report).find("FAIL") == std::string::npos);
  pctl_string_free(report);

  report = nullptr;
  CHECK(pctl_verify(PCTL_VERIFY_INJECT_INFO_NCE_SIGN_FLIP, &report) == PCTL_VERIFY_FAILED);
  REQUIRE(report != nullptr);
  CHECK(std::string(report).find("FAIL") != std::string::npos);
  pctl_string_free(report);

  // The injection does not leak into later clean runs.
  report = nullptr;
  CHECK(pctl_verify(0, &report) == PCTL_OK);
  pctl_string_free(report);
}

TEST_CASE("plot renders an SVG from a metrics CSV") {
  Config cfg;
  tiny_run_config(cfg);
  pctl_dataset* ds = pctl_dataset_generate(cfg.ptr);
  pctl_model* model = nullptr;
  pctl_metrics* metrics = nullptr;
  REQUIRE(pctl_train(cfg.ptr, ds, nullptr, nullptr, nullptr, &model, &metrics) == PCTL_OK);
  REQUIRE(pctl_metrics_write_csv(metrics, "capi_metrics.csv") == PCTL_OK);
  CHECK(pctl_plot_metrics("capi_metrics.csv", "capi_metrics.svg") == PCTL_OK);
  std::FILE* f = std::fopen("capi_metrics.svg", "rb");
  REQUIRE(f != nullptr);
  char head[6] = {0};
  REQUIRE(std::fread(head, 1, 4, f) == 4);
  std::fclose(f);
  CHECK(std::string(head) == "<svg");
  CHECK(pctl_plot_metrics("missing.csv", "x.svg") == PCTL_CONFIG_ERROR);

  pctl_metrics_free(metrics);
  pctl_model_free(model);
  pctl_dataset_free(ds);
  std::remove("capi_metrics.csv");
  std::remove("capi_metrics.svg");
}

TEST_CASE("version string is present") {
  CHECK(std::string(pctl_version()).find('.') != std::string::npos);
}
