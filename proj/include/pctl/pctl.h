/*
 * pctl - prototypical contrastive transfer learning, C API.
 *
 * The core is a C++ library; this header is the stable surface exposed by
 * the shared library. All entry points use opaque handles and return status
 * codes; pctl_last_error() describes the most recent failure on the calling
 * thread. Status values mirror the CLI exit codes.
 */
#ifndef PCTL_H
#define PCTL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PCTL_API __declspec(dllexport)
#else
#define PCTL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pctl_status {
  PCTL_OK = 0,
  PCTL_VERIFY_FAILED = 1,  /* a verification/assertion-style check failed */
  PCTL_CONFIG_ERROR = 2,   /* bad usage, unknown key, malformed or missing input */
  PCTL_RUNTIME_ERROR = 3   /* aborted computation (non-finite loss, write failure) */
} pctl_status;

typedef struct pctl_config pctl_config;
typedef struct pctl_dataset pctl_dataset;
typedef struct pctl_model pctl_model;
typedef struct pctl_metrics pctl_metrics;

typedef struct pctl_eval_result {
  double accuracy;
  double cross_entropy;
  uint64_t true_positives;
  uint64_t false_positives;
  uint64_t false_negatives;
  uint64_t true_negatives;
} pctl_eval_result;

typedef struct pctl_epoch_info {
  uint64_t epoch;       /* 1-based */
  double total_loss;    /* per-step mean for the epoch */
  double val_ce;
  double val_acc;
  double test_acc;
} pctl_epoch_info;

typedef void (*pctl_progress_fn)(const pctl_epoch_info* info, void* user);

PCTL_API const char* pctl_version(void);
/* Message of the most recent error on this thread; empty string if none. */
PCTL_API const char* pctl_last_error(void);
/* Frees any string returned as char* by this API. */
PCTL_API void pctl_string_free(char* s);

/* -- configuration ------------------------------------------------------ */

PCTL_API pctl_config* pctl_config_create(void);
PCTL_API pctl_config* pctl_config_load(const char* path);
PCTL_API pctl_status pctl_config_set(pctl_config* cfg, const char* key, const char* value);
PCTL_API pctl_status pctl_config_get(const pctl_config* cfg, const char* key, char* buf,
                                     size_t buflen);
/* Resolved configuration as sorted "section.key = value" lines. */
PCTL_API char* pctl_config_echo(const pctl_config* cfg);
PCTL_API void pctl_config_free(pctl_config* cfg);

/* -- datasets ------------------------------------------------------------ */

PCTL_API pctl_dataset* pctl_dataset_generate(const pctl_config* cfg);
PCTL_API pctl_dataset* pctl_dataset_load(const char* path);
PCTL_API pctl_status pctl_dataset_save(const pctl_dataset* ds, const char* path);
PCTL_API uint64_t pctl_dataset_record_count(const pctl_dataset* ds);
/* FNV-1a of the serialized dataset, as a 16-character hex string. */
PCTL_API pctl_status pctl_dataset_hash(const pctl_dataset* ds, char* buf, size_t buflen);
PCTL_API void pctl_dataset_free(pctl_dataset* ds);

/* -- training ------------------------------------------------------------ */

/*
 * Trains with the mode from run.mode (pctl, target_only or fine_tune).
 * checkpoint_path may be NULL; when set, the best checkpoint so far is kept
 * on disk after every improving epoch, so an aborted run retains the last
 * good state. progress may be NULL.
 */
PCTL_API pctl_status pctl_train(const pctl_config* cfg, const pctl_dataset* ds,
                                const char* checkpoint_path, pctl_progress_fn progress,
                                void* user, pctl_model** out_model,
                                pctl_metrics** out_metrics);

PCTL_API pctl_model* pctl_model_load(const char* path);
PCTL_API pctl_status pctl_model_save(const pctl_model* model, const char* path);
PCTL_API double pctl_model_inverse_temperature(const pctl_model* model);
PCTL_API void pctl_model_free(pctl_model* model);

PCTL_API uint64_t pctl_metrics_epoch_count(const pctl_metrics* metrics);
/* 1-based epoch with minimal validation cross entropy; 0 if none. */
PCTL_API uint64_t pctl_metrics_best_epoch(const pctl_metrics* metrics);
/* 1-based first epoch of the fine-tuning target phase; 0 otherwise. */
PCTL_API uint64_t pctl_metrics_phase2_start(const pctl_metrics* metrics);
PCTL_API char* pctl_metrics_csv(const pctl_metrics* metrics);
PCTL_API pctl_status pctl_metrics_write_csv(const pctl_metrics* metrics, const char* path);
PCTL_API void pctl_metrics_free(pctl_metrics* metrics);

/* -- evaluation ---------------------------------------------------------- */

/* domain: "source" | "target"; split: "train" | "validation" | "test". */
PCTL_API pctl_status pctl_evaluate(const pctl_model* model, const pctl_dataset* ds,
                                   const char* domain, const char* split,
                                   pctl_eval_result* out);

/* -- ablation ------------------------------------------------------------ */

/*
 * conditions: semicolon-separated schedules, e.g. "33;64;128;64,128,256".
 * Runs run.trials seeds per condition and reports mean and standard
 * deviation of the best-epoch test accuracy.
 */
PCTL_API pctl_status pctl_run_ablation(const pctl_config* cfg, const pctl_dataset* ds,
                                       const char* conditions, char** out_report);

/* -- verification -------------------------------------------------------- */

enum { PCTL_VERIFY_INJECT_INFO_NCE_SIGN_FLIP = 1u };

/*
 * Runs the built-in property suite (gradient checks, analytic limit cases,
 * clustering oracle, concentration normalization, EMA decay, temperature
 * clamp). Returns PCTL_OK when every check passes, PCTL_VERIFY_FAILED
 * otherwise; *out_report carries one line per check. The sign-flip flag
 * deliberately corrupts the info_nce gradient for the run so callers can
 * confirm that the suite catches a real defect.
 */
PCTL_API pctl_status pctl_verify(uint32_t flags, char** out_report);

/* -- plotting ------------------------------------------------------------ */

PCTL_API pctl_status pctl_plot_metrics(const char* csv_path, const char* svg_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PCTL_H */
