#include "pctl/pctl.h"

#include <cstring>
#include <fstream>
#include <string>

#include "config.hpp"
#include "data.hpp"
#include "plot.hpp"
#include "trainer.hpp"
#include "verify.hpp"

// Opaque handle definitions: each wraps the corresponding core type.
struct pctl_config {
  pctl::TrainConfig cfg;
};
struct pctl_dataset {
  pctl::DatasetFile ds;
};
struct pctl_model {
  pctl::ModelState model;
};
struct pctl_metrics {
  pctl::RunMetrics metrics;
};

namespace {

thread_local std::string g_last_error;

pctl_status status_of(const pctl::Error& e) {
  g_last_error = e.what();
  switch (e.kind()) {
    case pctl::ErrorKind::Verify: return PCTL_VERIFY_FAILED;
    case pctl::ErrorKind::Config: return PCTL_CONFIG_ERROR;
    case pctl::ErrorKind::Runtime: return PCTL_RUNTIME_ERROR;
  }
  return PCTL_RUNTIME_ERROR;
}

pctl_status status_of(const std::exception& e) {
  g_last_error = e.what();
  return PCTL_RUNTIME_ERROR;
}

// Runs fn, converting exceptions to status codes.
template <typename Fn>
pctl_status guarded(Fn&& fn) {
  try {
    fn();
    return PCTL_OK;
  } catch (const pctl::Error& e) {
    return status_of(e);
  } catch (const std::exception& e) {
    return status_of(e);
  }
}

// Runs fn returning a heap handle; nullptr on failure.
template <typename Fn>
auto guarded_ptr(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const pctl::Error& e) {
    status_of(e);
    return nullptr;
  } catch (const std::exception& e) {
    status_of(e);
    return nullptr;
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

pctl_status copy_to_buffer(const std::string& s, char* buf, size_t buflen) {
  if (buf == nullptr || buflen == 0 || s.size() + 1 > buflen) {
    g_last_error = "buffer too small (" + std::to_string(s.size() + 1) + " bytes needed)";
    return PCTL_CONFIG_ERROR;
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return PCTL_OK;
}

}  // namespace

extern "C" {

const char* pctl_version(void) { return "0.1.0"; }

const char* pctl_last_error(void) { return g_last_error.c_str(); }

void pctl_string_free(char* s) { delete[] s; }

pctl_config* pctl_config_create(void) {
  return guarded_ptr([] { return new pctl_config{}; });
}

pctl_config* pctl_config_load(const char* path) {
  return guarded_ptr([&] { return new pctl_config{pctl::TrainConfig::from_file(path)}; });
}

pctl_status pctl_config_set(pctl_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    if (!cfg || !key || !value) throw pctl::Error::config("pctl_config_set: null argument");
    cfg->cfg.set(key, value);
  });
}

pctl_status pctl_config_get(const pctl_config* cfg, const char* key, char* buf, size_t buflen) {
  std::string value;
  pctl_status st = guarded([&] {
    if (!cfg || !key) throw pctl::Error::config("pctl_config_get: null argument");
    value = cfg->cfg.get(key);
  });
  if (st != PCTL_OK) return st;
  return copy_to_buffer(value, buf, buflen);
}

char* pctl_config_echo(const pctl_config* cfg) {
  return guarded_ptr([&]() -> char* {
    if (!cfg) throw pctl::Error::config("pctl_config_echo: null config");
    return dup_string(cfg->cfg.echo());
  });
}

void pctl_config_free(pctl_config* cfg) { delete cfg; }

pctl_dataset* pctl_dataset_generate(const pctl_config* cfg) {
  return guarded_ptr([&] {
    if (!cfg) throw pctl::Error::config("pctl_dataset_generate: null config");
    return new pctl_dataset{pctl::generate_synthetic(cfg->cfg.data)};
  });
}

pctl_dataset* pctl_dataset_load(const char* path) {
  return guarded_ptr([&] {
    if (!path) throw pctl::Error::config("pctl_dataset_load: null path");
    return new pctl_dataset{pctl::load_dataset(path)};
  });
}

pctl_status pctl_dataset_save(const pctl_dataset* ds, const char* path) {
  return guarded([&] {
    if (!ds || !path) throw pctl::Error::config("pctl_dataset_save: null argument");
    pctl::save_dataset(ds->ds, path);
  });
}

uint64_t pctl_dataset_record_count(const pctl_dataset* ds) {
  return ds ? ds->ds.records.size() : 0;
}

pctl_status pctl_dataset_hash(const pctl_dataset* ds, char* buf, size_t buflen) {
  std::string hex;
  pctl_status st = guarded([&] {
    if (!ds) throw pctl::Error::config("pctl_dataset_hash: null dataset");
    hex = pctl::to_hex(pctl::fnv1a64(pctl::dataset_to_string(ds->ds)));
  });
  if (st != PCTL_OK) return st;
  return copy_to_buffer(hex, buf, buflen);
}

void pctl_dataset_free(pctl_dataset* ds) { delete ds; }

pctl_status pctl_train(const pctl_config* cfg, const pctl_dataset* ds,
                       const char* checkpoint_path, pctl_progress_fn progress, void* user,
                       pctl_model** out_model, pctl_metrics** out_metrics) {
  return guarded([&] {
    if (!cfg || !ds) throw pctl::Error::config("pctl_train: null argument");
    pctl::TrainHooks hooks;
    if (checkpoint_path) hooks.checkpoint_path = checkpoint_path;
    if (progress) {
      hooks.on_epoch = [progress, user](const pctl::EpochRow& row) {
        pctl_epoch_info info;
        info.epoch = row.epoch;
        info.total_loss = row.mean.total;
        info.val_ce = row.val_ce;
        info.val_acc = row.val_acc;
        info.test_acc = row.test_acc;
        progress(&info, user);
      };
    }
    pctl::TrainResult res = pctl::train(cfg->cfg, ds->ds, hooks);
    if (out_model) *out_model = new pctl_model{std::move(res.best)};
    if (out_metrics) *out_metrics = new pctl_metrics{std::move(res.metrics)};
  });
}

pctl_model* pctl_model_load(const char* path) {
  return guarded_ptr([&] {
    if (!path) throw pctl::Error::config("pctl_model_load: null path");
    return new pctl_model{pctl::ModelState::load(path)};
  });
}

pctl_status pctl_model_save(const pctl_model* model, const char* path) {
  return guarded([&] {
    if (!model || !path) throw pctl::Error::config("pctl_model_save: null argument");
    model->model.save(path);
  });
}

double pctl_model_inverse_temperature(const pctl_model* model) {
  return model ? model->model.inv_tau() : 0.0;
}

void pctl_model_free(pctl_model* model) { delete model; }

uint64_t pctl_metrics_epoch_count(const pctl_metrics* metrics) {
  return metrics ? metrics->metrics.rows.size() : 0;
}

uint64_t pctl_metrics_best_epoch(const pctl_metrics* metrics) {
  return metrics ? metrics->metrics.best_epoch : 0;
}

uint64_t pctl_metrics_phase2_start(const pctl_metrics* metrics) {
  return metrics ? metrics->metrics.phase2_start : 0;
}

char* pctl_metrics_csv(const pctl_metrics* metrics) {
  return guarded_ptr([&]() -> char* {
    if (!metrics) throw pctl::Error::config("pctl_metrics_csv: null metrics");
    return dup_string(metrics->metrics.to_csv());
  });
}

pctl_status pctl_metrics_write_csv(const pctl_metrics* metrics, const char* path) {
  return guarded([&] {
    if (!metrics || !path) throw pctl::Error::config("pctl_metrics_write_csv: null argument");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw pctl::Error::config("cannot write metrics CSV '" + std::string(path) + "'");
    out << metrics->metrics.to_csv();
    if (!out) throw pctl::Error::runtime("metrics CSV write failed");
  });
}

void pctl_metrics_free(pctl_metrics* metrics) { delete metrics; }

pctl_status pctl_evaluate(const pctl_model* model, const pctl_dataset* ds, const char* domain,
                          const char* split, pctl_eval_result* out) {
  return guarded([&] {
    if (!model || !ds || !domain || !split || !out) {
      throw pctl::Error::config("pctl_evaluate: null argument");
    }
    pctl::EvalResult r = pctl::evaluate(model->model, ds->ds, pctl::parse_domain(domain),
                                        pctl::parse_split(split));
    out->accuracy = r.accuracy;
    out->cross_entropy = r.cross_entropy;
    out->true_positives = r.tp;
    out->false_positives = r.fp;
    out->false_negatives = r.fn;
    out->true_negatives = r.tn;
  });
}

pctl_status pctl_run_ablation(const pctl_config* cfg, const pctl_dataset* ds,
                              const char* conditions, char** out_report) {
  return guarded([&] {
    if (!cfg || !ds || !conditions) throw pctl::Error::config("pctl_run_ablation: null argument");
    pctl::AblationReport report =
        pctl::run_ablation(cfg->cfg, ds->ds, pctl::parse_ablation_conditions(conditions));
    if (out_report) *out_report = dup_string(report.to_text());
  });
}

pctl_status pctl_verify(uint32_t flags, char** out_report) {
  try {
    pctl::VerifyReport report =
        pctl::run_verification((flags & PCTL_VERIFY_INJECT_INFO_NCE_SIGN_FLIP) != 0);
    if (out_report) *out_report = dup_string(report.to_text());
    if (!report.all_passed()) {
      g_last_error = "verification failed";
      return PCTL_VERIFY_FAILED;
    }
    return PCTL_OK;
  } catch (const pctl::Error& e) {
    return status_of(e);
  } catch (const std::exception& e) {
    return status_of(e);
  }
}

pctl_status pctl_plot_metrics(const char* csv_path, const char* svg_path) {
  return guarded([&] {
    if (!csv_path || !svg_path) throw pctl::Error::config("pctl_plot_metrics: null argument");
    pctl::plot_metrics_csv(csv_path, svg_path);
  });
}

}  // extern "C"
