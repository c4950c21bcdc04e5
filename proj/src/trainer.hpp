#pragma once

#include <functional>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "loss.hpp"
#include "optim.hpp"

namespace pctl {

struct EvalResult {
  double accuracy = 0.0;
  double cross_entropy = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown mean;     // per-step means over the epoch
  double val_ce = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double seconds = 0.0;
};

// One row per completed epoch. The best epoch is the one with minimal
// validation cross entropy (ties keep the earlier epoch); for fine-tuning
// only the target phase competes and phase2_start marks its first epoch.
struct RunMetrics {
  std::vector<EpochRow> rows;
  std::size_t best_epoch = 0;    // 1-based; 0 if no epoch completed
  std::size_t phase2_start = 0;  // 1-based; 0 unless mode = fine_tune
  std::size_t source_batches = 0;
  std::size_t target_batches = 0;
  std::size_t short_negative_warnings = 0;

  std::string to_csv() const;
  static const std::vector<std::string>& csv_columns();
};

struct TrainResult {
  ModelState best;
  RunMetrics metrics;
};

struct TrainHooks {
  std::function<void(const EpochRow&)> on_epoch;
  // When set, the best checkpoint so far is rewritten after each improving
  // epoch, so an aborted run still leaves the last good state on disk.
  std::string checkpoint_path;
  // When set, the per-epoch clustering dump is written under this directory.
  std::string dump_dir;
};

// Dispatches on cfg.mode.
TrainResult train(const TrainConfig& cfg, const DatasetFile& ds, const TrainHooks& hooks = {});

TrainResult train_pctl(const TrainConfig& cfg, const DatasetFile& ds,
                       const TrainHooks& hooks = {});
TrainResult train_target_only(const TrainConfig& cfg, const DatasetFile& ds,
                              const TrainHooks& hooks = {});
TrainResult train_fine_tune(const TrainConfig& cfg, const DatasetFile& ds,
                            const TrainHooks& hooks = {});

// Accuracy with threshold 0.5 on p(y=1), ties predicted positive, plus mean
// cross entropy and the confusion counts.
EvalResult evaluate(const ModelState& model, const DatasetFile& ds, Domain domain, Split split);

struct AblationCondition {
  std::string name;
  std::vector<std::size_t> schedule;
};

struct AblationRow {
  std::string name;
  std::vector<double> accuracies;  // test accuracy per trial
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_text() const;
};

// Runs train_pctl for each condition over cfg.trials consecutive seeds and
// reports mean and standard deviation of the best-epoch test accuracy.
AblationReport run_ablation(const TrainConfig& cfg, const DatasetFile& ds,
                            const std::vector<AblationCondition>& conditions);

std::vector<AblationCondition> parse_ablation_conditions(const std::string& spec);

}  // namespace pctl
